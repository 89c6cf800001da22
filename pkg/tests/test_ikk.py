import numpy as np
import pytest
from scipy import integrate

from kaclab.grid import Field, grid_points, hat
from kaclab.ikk import (IKKParams, ParamError, context, linear_symbol, remainder_fields, simulate,
                        simulate_ensemble, step, time_regularity_norm)
from kaclab.kernel import bump_profile, make_bump_kernel, rescale
from kaclab.noise import NoiseStream, make_streams, sample_correlated_increment, MollifierSpec
from kaclab.stepping import clamp
from kaclab.trajectory import Trajectory


def sine(n, amp=0.3, k=1):
    return Field.from_function(lambda x: amp * np.sin(2 * np.pi * k * x), n)


def test_symbol_vanishes_at_zero():
    p = IKKParams(gamma=0.5)
    assert linear_symbol(0, p, context(p).Jg) == 0.0


def test_symbol_against_quadrature_at_gamma_one():
    p = IKKParams(gamma=1.0, N=512)
    J = make_bump_kernel(0.25, 512)
    f = lambda x: bump_profile(np.array(x), 0.25)
    mass = integrate.quad(f, -0.25, 0.25, epsabs=1e-15, limit=200)[0]
    for k in (1, 2, 5):
        Jk = integrate.quad(lambda x: f(x) * np.cos(2 * np.pi * k * x), -0.25, 0.25, epsabs=1e-15, limit=200)[0] / mass
        ref = -(2 * np.pi * k) ** 2 * (1 - p.beta * Jk)
        assert linear_symbol(k, p, J) == pytest.approx(ref, rel=1e-8)


def test_symbol_nonpositive_for_negative_a():
    p = IKKParams(gamma=0.1, a=-1.0, N=128)
    k = np.arange(0, 128 // 3 + 1)
    assert np.all(linear_symbol(k, p, context(p).Jg) <= 0)


def test_symbol_approaches_fourth_order_limit():
    D = context(IKKParams(gamma=0.5)).D
    k = np.array([1, 2])
    ch = -(2 * np.pi * k) ** 2 * ((D / 2) * (2 * np.pi * k) ** 2 + 1.0)
    errs = []
    for g in (0.1, 0.01, 0.001):
        p = IKKParams(gamma=g, N=1024)
        errs.append(np.max(np.abs(linear_symbol(k, p, rescale(make_bump_kernel(0.25, 1024), g)) / ch - 1)))
    assert errs[0] > errs[1] > errs[2] and errs[2] < 0.05


def test_constant_state_is_stationary():
    p = IKKParams(gamma=0.5, epsilon=0.0)
    u = Field(np.full(64, 0.3))
    new, rep = step(u, p)
    assert np.allclose(new.values, 0.3, atol=1e-14)
    assert rep.clamp_count == 0 and np.isfinite(rep.cfl)


def test_step_conserves_mass_with_noise():
    p = IKKParams(gamma=0.25)
    u = sine(64, 0.5) + 0.1
    dW = sample_correlated_increment(NoiseStream(3), MollifierSpec(p.delta, 64), p.dt, K=p.truncation)
    new, _ = step(u, p, dW, Field(np.cos(2 * np.pi * grid_points(64))))
    assert abs(new.mean() - u.mean()) < 1e-10


def test_small_mode_follows_linear_symbol():
    p = IKKParams(gamma=0.25, epsilon=0.0, T=0.02, dt=1e-5, stride=2000)
    tr = simulate(p, sine(64, 1e-4), None)
    lam = linear_symbol(1, p, context(p).Jg)
    got = abs(hat(tr.values[-1])[1]) / abs(hat(tr.values[0])[1])
    assert got == pytest.approx(np.exp(lam * p.T), rel=1e-4)


def test_deterministic_decay():
    p = IKKParams(gamma=0.1, epsilon=0.0, T=0.1, N=64, stride=100)
    tr = simulate(p, sine(64, 1.0), None)
    norms = np.sqrt(np.mean(tr.values**2, axis=1))
    assert np.all(np.diff(norms) < 0)


def test_first_order_in_time():
    u0 = sine(64, 0.8) + Field.from_function(lambda x: 0.3 * np.cos(4 * np.pi * x), 64)
    ends = []
    for dt in (4e-4, 2e-4, 1e-4):
        p = IKKParams(gamma=0.25, epsilon=0.0, T=0.02, dt=dt, stride=10**6)
        ends.append(simulate(p, u0, None).values[-1])
    r = np.max(np.abs(ends[0] - ends[1])) / np.max(np.abs(ends[1] - ends[2]))
    assert 1.6 < r < 2.5


def test_same_seed_same_trajectory():
    p = IKKParams(gamma=0.25, T=0.01)
    a = simulate(p, sine(64), NoiseStream(5, 2))
    b = simulate(p, sine(64), NoiseStream(5, 2))
    c = simulate(p, sine(64), NoiseStream(5, 3))
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_batched_replicates_match_single_runs():
    p = IKKParams(gamma=0.25, T=0.01)
    st = make_streams(1, 3)
    ens = simulate_ensemble(p, sine(64), st)
    single = simulate(p, sine(64), st[1])
    assert np.allclose(ens.trajectory(1).values, single.values, atol=1e-13)


def test_noisy_run_keeps_mass_and_bound():
    p = IKKParams(gamma=0.5, T=0.05)
    ens = simulate_ensemble(p, sine(64, 0.5), make_streams(2, 4))
    mass = ens.values.mean(axis=-1)
    assert np.max(np.abs(mass - mass[0])) < 1e-8
    assert np.max(np.abs(ens.values)) <= p.bound


def test_clamp_preserves_mean_and_logs():
    u = np.array([[2.5, 0.0, -0.1, 0.2, 0.0, 0.1, -0.3, 0.0]])
    out, events = clamp(u, 2.0, 1e-6, 0.5)
    assert np.max(np.abs(out)) <= 2.0 - 1e-6
    assert out.mean() == pytest.approx(u.mean(), abs=1e-15)
    assert len(events) == 1 and events[0].index == 0
    assert events[0].magnitude == pytest.approx(0.5 + 1e-6)


def test_clamp_leaves_admissible_rows_alone():
    u = np.zeros((2, 8))
    out, events = clamp(u, 1.0, 1e-6, 0.0)
    assert out is u and events == []


def test_rejects_inadmissible_start():
    with pytest.raises(ParamError):
        simulate(IKKParams(gamma=0.5), Field(np.full(64, 2.0)), None)


@pytest.mark.parametrize("kw", [dict(gamma=0.0), dict(gamma=1.5), dict(gamma=0.5, delta=0.0),
                                dict(gamma=0.5, epsilon=-1.0), dict(gamma=0.5, K=40),
                                dict(gamma=0.5, clamp_margin=0.0), dict(gamma=0.5, N=48)])
def test_param_validation(kw):
    with pytest.raises(ValueError):
        IKKParams(**kw)


def test_remainders_vanish_on_constants():
    p = IKKParams(gamma=0.5)
    for r in remainder_fields(Field(np.full(64, 0.4)), p):
        assert r.sup_norm() < 1e-12


def test_kac_remainder_shrinks_for_smooth_data():
    u = sine(256, 0.5)
    sizes = [remainder_fields(u, IKKParams(gamma=g, N=256))[2].sup_norm() for g in (0.5, 0.125, 1 / 64)]
    assert sizes[0] > sizes[1] > sizes[2]


def test_time_regularity_of_constant_path():
    v = np.tile(np.cos(2 * np.pi * grid_points(16)), (6, 1))
    tr = Trajectory(np.linspace(0, 1, 6), v)
    from kaclab.ikk import negative_sobolev_norm
    assert time_regularity_norm(tr, 0.25, 2.0) == pytest.approx(float(negative_sobolev_norm(v[0], 2.0)), rel=1e-12)


def test_time_regularity_needs_snapshots_and_valid_indices():
    tr = Trajectory(np.linspace(0, 1, 3), np.zeros((3, 8)))
    with pytest.raises(ParamError):
        time_regularity_norm(tr)
    tr = Trajectory(np.linspace(0, 1, 5), np.zeros((5, 8)))
    with pytest.raises(ParamError):
        time_regularity_norm(tr, alpha=0.5)


def test_time_regularity_stride_stable():
    p = IKKParams(gamma=0.25, epsilon=0.0, T=0.1, stride=10)
    tr = simulate(p, sine(64, 0.8), None)
    a = time_regularity_norm(tr, 0.25, 7.0)
    b = time_regularity_norm(tr.every(2), 0.25, 7.0)
    assert abs(a - b) / a < 0.1
