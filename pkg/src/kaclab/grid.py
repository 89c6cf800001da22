"""Periodic grid on the unit torus [-1/2, 1/2) with spectral calculus.

Wavenumber convention: mode k is exp(2*pi*i*k*x), so d/dx acts as 2*pi*i*k.
Coefficients are c_k = int f(x) exp(-2*pi*i*k*x) dx, approximated by the
trapezoid rule on x_j = -1/2 + j/N.  Because the grid starts at -1/2 rather
than 0, the FFT picks up a phase (-1)^k which is folded in here once.

Two layers are provided: `Field`/`Spectrum` value types for user-facing
code, and array helpers (`hat`, `unhat`, `spectral_derivative`, ...) that
act on the last axis and accept batches of shape (..., N).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Callable

import numpy as np

FIELD_MAGIC = b"KHFIELD1"


class GridError(ValueError):
    """Invalid grid data or an operation on incompatible grids."""


def check_n(n: int) -> int:
    n = int(n)
    if n < 8 or n & (n - 1):
        raise GridError(f"grid size must be a power of two >= 8, got {n}")
    return n


def grid_points(n: int) -> np.ndarray:
    n = check_n(n)
    return -0.5 + np.arange(n) / n


def wavenumbers(n: int) -> np.ndarray:
    """Nonnegative wavenumbers 0..N/2 matching the rfft layout."""
    return np.arange(n // 2 + 1)


def _phase(n: int) -> np.ndarray:
    return np.where(wavenumbers(n) % 2 == 0, 1.0, -1.0)


# ---------------------------------------------------------------- array layer

def hat(values: np.ndarray) -> np.ndarray:
    """Half-spectrum c_0..c_{N/2} along the last axis."""
    n = values.shape[-1]
    return np.fft.rfft(values, axis=-1) * (_phase(n) / n)


def unhat(coeffs: np.ndarray, n: int) -> np.ndarray:
    return np.fft.irfft(coeffs * (_phase(n) * n), n=n, axis=-1)


def derivative_symbol(n: int, order: int) -> np.ndarray:
    k = wavenumbers(n)
    sym = (2j * np.pi * k) ** order
    if order % 2 == 1:
        # the Nyquist mode has no real odd derivative
        sym[-1] = 0.0
    return sym


def spectral_derivative(values: np.ndarray, order: int = 1) -> np.ndarray:
    n = values.shape[-1]
    return unhat(hat(values) * derivative_symbol(n, order), n)


def dealias_mask(n: int) -> np.ndarray:
    """2/3-rule mask: keep |k| <= N/3."""
    return (wavenumbers(n) <= n // 3).astype(float)


def dealias(values: np.ndarray) -> np.ndarray:
    n = values.shape[-1]
    return unhat(hat(values) * dealias_mask(n), n)


def sobolev_weights(n: int, s: float) -> np.ndarray:
    """Weights (1+(2 pi k)^2)^s on the half spectrum, doubled for k>0 pairs.

    The Nyquist mode appears once in the full spectrum, so it is not doubled.
    """
    k = wavenumbers(n)
    w = (1.0 + (2 * np.pi * k) ** 2) ** s
    mult = np.full(k.shape, 2.0)
    mult[0] = 1.0
    mult[-1] = 1.0
    return w * mult


def sobolev_norm_array(values: np.ndarray, s: float = 0.0) -> np.ndarray:
    c = hat(values)
    n = values.shape[-1]
    return np.sqrt(np.sum(sobolev_weights(n, s) * np.abs(c) ** 2, axis=-1))


def antiderivative_array(values: np.ndarray) -> np.ndarray:
    n = values.shape[-1]
    sym = derivative_symbol(n, 1)
    inv = np.zeros_like(sym)
    inv[1:-1] = 1.0 / sym[1:-1]
    return unhat(hat(values) * inv, n)


# ---------------------------------------------------------------- value types

@dataclass(frozen=True, eq=False)
class Field:
    """Real samples on x_j = -1/2 + j/N."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1:
            raise GridError(f"a Field is one-dimensional, got shape {v.shape}")
        check_n(v.size)
        bad = ~np.isfinite(v)
        if bad.any():
            j = int(np.argmax(bad))
            raise GridError(f"non-finite sample {v[j]!r} at index {j}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, fn: Callable[[np.ndarray], np.ndarray], n: int) -> "Field":
        return cls(np.broadcast_to(fn(grid_points(n)), (check_n(n),)))

    @classmethod
    def zeros(cls, n: int) -> "Field":
        return cls(np.zeros(check_n(n)))

    @property
    def n_points(self) -> int:
        return self.values.size

    @property
    def x(self) -> np.ndarray:
        return grid_points(self.n_points)

    def mean(self) -> float:
        return float(self.values.mean())

    def l2_norm(self) -> float:
        return float(np.sqrt(np.mean(self.values**2)))

    def l1_norm(self) -> float:
        return float(np.mean(np.abs(self.values)))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __eq__(self, other):
        return isinstance(other, Field) and np.array_equal(self.values, other.values)

    def __add__(self, other):
        return Field(self.values + _vals(other))

    def __sub__(self, other):
        return Field(self.values - _vals(other))

    def __mul__(self, other):
        return Field(self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return Field(-self.values)


def _vals(x):
    return x.values if isinstance(x, Field) else x


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Full complex spectrum in FFT order (k = 0, 1, ..., N/2, -N/2+1, ..., -1)."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=complex)
        if c.ndim != 1:
            raise GridError("spectrum must be one-dimensional")
        check_n(c.size)
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @property
    def n_points(self) -> int:
        return self.coefficients.size

    def coefficient(self, k: int) -> complex:
        n = self.n_points
        if abs(k) > n // 2:
            raise GridError(f"|k| must be <= {n // 2}, got {k}")
        return complex(self.coefficients[k % n])

    def hermitian_defect(self) -> float:
        c = self.coefficients
        mirrored = np.conj(c[(-np.arange(c.size)) % c.size])
        scale = max(np.max(np.abs(c)), 1e-300)
        return float(np.max(np.abs(c - mirrored)) / scale)


def to_spectrum(f: Field) -> Spectrum:
    n = f.n_points
    k = np.fft.fftfreq(n, 1.0 / n)
    phase = np.where(k.astype(int) % 2 == 0, 1.0, -1.0)
    return Spectrum(np.fft.fft(f.values) * phase / n)


def from_spectrum(s: Spectrum) -> Field:
    n = s.n_points
    c = s.coefficients
    if not np.all(np.isfinite(c)):
        raise GridError("non-finite spectral coefficients")
    k = np.fft.fftfreq(n, 1.0 / n)
    phase = np.where(k.astype(int) % 2 == 0, 1.0, -1.0)
    return Field(np.real(np.fft.ifft(c * phase * n)))


def derivative(f: Field, order: int = 1) -> Field:
    if order not in (1, 2, 3, 4, 5):
        raise GridError(f"derivative order must be in 1..5, got {order}")
    return Field(spectral_derivative(f.values, order))


def _same_grid(f: Field, g: Field):
    if f.n_points != g.n_points:
        raise GridError(f"grid mismatch: {f.n_points} vs {g.n_points}")


def convolve(f: Field, g: Field) -> Field:
    """(f*g)(x) = int f(x-y) g(y) dy on the unit torus."""
    _same_grid(f, g)
    n = f.n_points
    return Field(unhat(hat(f.values) * hat(g.values), n))


def sobolev_norm(f: Field, s: float) -> float:
    if not -10 <= s <= 10:
        raise GridError(f"Sobolev index must lie in [-10, 10], got {s}")
    return float(sobolev_norm_array(f.values, s))


def antiderivative_mean_zero(f: Field, tol: float = 1e-8) -> Field:
    m = f.mean()
    # scale by the sup norm: squaring tiny values for an L2 norm can underflow
    if abs(m) > tol * float(np.max(np.abs(f.values))) and abs(m) > 1e-300:
        raise GridError(f"antiderivative needs a mean-zero input, measured mean {m:.3e}")
    return Field(antiderivative_array(f.values))


# ---------------------------------------------------------------- binary IO

def write_field(fh: BinaryIO, f: Field) -> None:
    fh.write(FIELD_MAGIC)
    fh.write(struct.pack("<I", f.n_points))
    fh.write(np.asarray(f.values, dtype="<f8").tobytes())


def read_field(fh: BinaryIO) -> Field:
    magic = fh.read(8)
    if magic != FIELD_MAGIC:
        raise GridError(f"bad field magic {magic!r}")
    (n,) = struct.unpack("<I", fh.read(4))
    raw = fh.read(8 * n)
    if len(raw) != 8 * n:
        raise GridError("truncated field record")
    return Field(np.frombuffer(raw, dtype="<f8").astype(float))


def field_bytes(f: Field) -> bytes:
    return FIELD_MAGIC + struct.pack("<I", f.n_points) + np.asarray(f.values, dtype="<f8").tobytes()
