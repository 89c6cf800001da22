import io

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kaclab.grid import (Field, GridError, antiderivative_mean_zero, convolve, dealias, derivative,
                         field_bytes, from_spectrum, grid_points, read_field, sobolev_norm, to_spectrum,
                         write_field)

sizes = st.sampled_from([8, 16, 32, 64])


def field_of(n, fn):
    return Field.from_function(fn, n)


def test_grid_starts_at_minus_half():
    x = grid_points(8)
    assert x[0] == -0.5
    assert np.allclose(np.diff(x), 1 / 8)


@pytest.mark.parametrize("n", [0, 6, 12, 1])
def test_bad_sizes_rejected(n):
    with pytest.raises(GridError):
        grid_points(n)


def test_sine_coefficients():
    s = to_spectrum(field_of(16, lambda x: np.sin(2 * np.pi * x)))
    assert s.coefficient(1) == pytest.approx(-0.5j, abs=1e-14)
    assert s.coefficient(-1) == pytest.approx(0.5j, abs=1e-14)
    assert s.hermitian_defect() < 1e-14


def test_coefficient_range_checked():
    s = to_spectrum(Field.zeros(8))
    with pytest.raises(GridError):
        s.coefficient(5)


def test_derivative_of_sine():
    f = field_of(64, lambda x: np.sin(2 * np.pi * x))
    d = derivative(f, 1)
    assert np.max(np.abs(d.values - 2 * np.pi * np.cos(2 * np.pi * grid_points(64)))) < 1e-10


def test_higher_derivatives_match_closed_form():
    x = grid_points(32)
    f = Field(np.cos(6 * np.pi * x))
    w = 6 * np.pi
    assert np.allclose(derivative(f, 2).values, -w**2 * np.cos(w * x), atol=1e-8)
    assert np.allclose(derivative(f, 3).values, w**3 * np.sin(w * x), atol=1e-6)
    assert np.allclose(derivative(f, 4).values, w**4 * np.cos(w * x), atol=1e-4)


def test_derivative_order_checked():
    with pytest.raises(GridError):
        derivative(Field.zeros(8), 6)


def test_nyquist_has_no_odd_derivative():
    f = Field(np.cos(np.pi * 8 * grid_points(8)))  # pure Nyquist mode
    assert np.allclose(derivative(f, 1).values, 0.0)


@given(sizes.flatmap(lambda n: arrays(np.float64, n, elements=st.floats(-10, 10))))
def test_parseval(v):
    f = Field(v)
    spec = to_spectrum(f)
    assert np.sum(np.abs(spec.coefficients) ** 2) == pytest.approx(np.mean(v**2), rel=1e-10, abs=1e-12)
    assert np.allclose(from_spectrum(spec).values, v, atol=1e-10)


@given(sizes.flatmap(lambda n: arrays(np.float64, n, elements=st.floats(-5, 5))))
def test_antiderivative_round_trip(v):
    f = Field(v - v.mean())
    spec = to_spectrum(f)
    n = f.n_points
    nyq = spec.coefficients[n // 2]
    back = derivative(antiderivative_mean_zero(f), 1)
    # the Nyquist mode is lost by any real first derivative
    expected = f.values - np.real(nyq) * np.cos(np.pi * n * (grid_points(n) + 0.5))
    assert np.allclose(back.values, expected, atol=1e-10)


def test_antiderivative_needs_mean_zero():
    with pytest.raises(GridError):
        antiderivative_mean_zero(Field(np.ones(8)))


@given(sizes.flatmap(lambda n: arrays(np.float64, n, elements=st.floats(-5, 5))))
def test_derivatives_have_zero_mass(v):
    assert abs(derivative(Field(v), 1).mean()) < 1e-9


def test_sobolev_norm_of_sine():
    f = field_of(32, lambda x: np.sin(2 * np.pi * x))
    for s in (-2.0, 0.0, 1.0):
        # |c_1|^2 + |c_-1|^2 = 1/2
        assert sobolev_norm(f, s) ** 2 == pytest.approx(0.5 * (1 + 4 * np.pi**2) ** s, rel=1e-12)
    with pytest.raises(GridError):
        sobolev_norm(f, 11)


def test_convolution_with_delta_is_identity():
    n = 16
    delta = np.zeros(n)
    delta[n // 2] = n  # unit mass at x = 0
    f = field_of(n, lambda x: np.cos(2 * np.pi * x) + x**2)
    assert np.allclose(convolve(f, Field(delta)).values, f.values)


def test_convolution_matches_direct_sum():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=8), rng.normal(size=8)
    # x_j - x_m = (j - m)/n, and x = 0 sits at index n/2
    direct = np.array([sum(a[(j - m + 4) % 8] * b[m] for m in range(8)) / 8 for j in range(8)])
    assert np.allclose(convolve(Field(a), Field(b)).values, direct)


def test_convolution_grid_mismatch():
    with pytest.raises(GridError):
        convolve(Field.zeros(8), Field.zeros(16))


def test_dealias_removes_top_third():
    x = grid_points(64)
    v = np.cos(2 * np.pi * x) + np.cos(2 * np.pi * 25 * x)
    assert np.allclose(dealias(v), np.cos(2 * np.pi * x))


def test_field_is_read_only_and_validated():
    f = Field(np.arange(8.0))
    with pytest.raises(ValueError):
        f.values[0] = 1.0
    with pytest.raises(GridError):
        Field(np.array([np.nan] * 8))


def test_field_binary_round_trip():
    f = field_of(16, lambda x: np.exp(np.sin(2 * np.pi * x)))
    buf = io.BytesIO()
    write_field(buf, f)
    raw = buf.getvalue()
    assert raw == field_bytes(f)
    assert raw[:8] == b"KHFIELD1" and len(raw) == 12 + 8 * 16
    assert read_field(io.BytesIO(raw)) == f


def test_truncated_record_rejected():
    raw = field_bytes(Field.zeros(8))[:-3]
    with pytest.raises(GridError):
        read_field(io.BytesIO(raw))
