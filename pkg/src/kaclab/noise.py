"""Fourier-mode noise: mollified and truncated white increments.

Basis enumeration (index m):
    m = 0       -> 1
    m = 2k - 1  -> sqrt(2) cos(2 pi k x)
    m = 2k      -> sqrt(2) sin(2 pi k x)
The mollified noise multiplies the pair of wavenumber k by eta_delta^(k);
white noise uses multiplier 1.  Both read the same Gaussians, which is what
couples runs at different delta.

Gaussians come from Philox keyed by (seed, replicate) with counter
(0, 0, step // BLOCK, mode), so each (seed, replicate, mode, step) value is fixed
regardless of K, N or how many steps are drawn.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Field, check_n, grid_points, unhat
from .kernel import bump_profile

BLOCK = 1024
DEFAULT_MOLLIFIER_RADIUS = 0.5


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class MollifierSpec:
    delta: float
    n_points: int = 64
    radius: float = DEFAULT_MOLLIFIER_RADIUS

    def __post_init__(self):
        if not self.delta > 0:
            raise NoiseError(f"delta must be positive, got {self.delta}")
        check_n(self.n_points)
        if not 0 < self.radius <= 0.5:
            raise NoiseError(f"mollifier radius must lie in (0, 1/2], got {self.radius}")
        if self.scaled_radius < 4.0 / self.n_points:
            raise NoiseError(
                f"mollifier support {self.scaled_radius:.4g} spans fewer than 4 cells at N={self.n_points}"
            )

    @property
    def scaled_radius(self) -> float:
        return min(self.radius * self.delta ** (1 / 3), 0.5)

    def samples(self) -> Field:
        b = bump_profile(grid_points(self.n_points), self.scaled_radius)
        return Field(b / (b.sum() / self.n_points))


def mode_multipliers(spec: MollifierSpec, K: int) -> np.ndarray:
    """eta_delta^(k) for k = 0..K."""
    n = spec.n_points
    if not 0 <= K <= n // 2:
        raise NoiseError(f"K must lie in [0, {n // 2}], got {K}")
    x = grid_points(n)
    eta = spec.samples().values
    k = np.arange(K + 1)
    # even mollifier: only the cosine transform survives
    return np.cos(2 * np.pi * np.outer(k, x)) @ eta / n


def white_multipliers(K: int) -> np.ndarray:
    return np.ones(K + 1)


def default_K(n: int) -> int:
    return n // 3


def basis_values(K: int, n: int) -> np.ndarray:
    """Rows e_m(x_j) for m = 0..2K."""
    x = grid_points(n)
    out = np.empty((2 * K + 1, n))
    out[0] = 1.0
    for k in range(1, K + 1):
        out[2 * k - 1] = np.sqrt(2) * np.cos(2 * np.pi * k * x)
        out[2 * k] = np.sqrt(2) * np.sin(2 * np.pi * k * x)
    return out


def basis_derivatives(K: int, n: int) -> np.ndarray:
    x = grid_points(n)
    out = np.zeros((2 * K + 1, n))
    for k in range(1, K + 1):
        w = 2 * np.pi * k
        out[2 * k - 1] = -np.sqrt(2) * w * np.sin(w * x)
        out[2 * k] = np.sqrt(2) * w * np.cos(w * x)
    return out


@dataclass(frozen=True)
class NoiseCoefficients:
    F1: float
    F2: Field
    F3: float
    K: int
    F1_spread: float
    F3_spread: float


def coefficients(spec: MollifierSpec, K: int | None = None) -> NoiseCoefficients:
    """Sums over the mollified basis f_m = eta_delta * e_m, evaluated pointwise."""
    n = spec.n_points
    K = n // 2 if K is None else K
    mult = np.repeat(mode_multipliers(spec, K), 2)[1:]
    f = mult[:, None] * basis_values(K, n)
    df = mult[:, None] * basis_derivatives(K, n)
    F1 = np.sum(f**2, axis=0)
    F2 = np.sum(f * df, axis=0)  # (1/2) d/dx f^2 = f f'
    F3 = np.sum(df**2, axis=0)
    return NoiseCoefficients(
        F1=float(F1.mean()),
        F2=Field(F2),
        F3=float(F3.mean()),
        K=K,
        F1_spread=float(F1.max() - F1.min()),
        F3_spread=float(F3.max() - F3.min()),
    )


def F1_constant(mult: np.ndarray) -> float:
    """Closed form 1*m_0^2 + 2 sum_{k>=1} m_k^2 of the pointwise sum."""
    return float(mult[0] ** 2 + 2 * np.sum(mult[1:] ** 2))


@dataclass(frozen=True)
class NoiseStream:
    seed: int
    replicate: int = 0
    K: int | None = None
    zero: bool = False

    def __post_init__(self):
        if not 0 <= self.seed < 2**64 or not 0 <= self.replicate < 2**64:
            raise NoiseError("seed and replicate must fit in an unsigned 64-bit integer")

    def block(self, mode: int, block_index: int) -> np.ndarray:
        # Philox advances the low counter words while drawing, so the block
        # coordinates live in the two high words where they can never collide
        bitgen = np.random.Philox(key=[self.seed, self.replicate], counter=[0, 0, block_index, mode])
        return np.random.Generator(bitgen).standard_normal(BLOCK)

    def gaussians(self, step: int, n_modes: int) -> np.ndarray:
        if self.zero:
            return np.zeros(n_modes)
        b, i = divmod(step, BLOCK)
        return np.array([self.block(m, b)[i] for m in range(n_modes)])


class GaussianSource:
    """Block cache over a batch of streams; draw(step) gives shape (M, n_modes)."""

    def __init__(self, streams: list[NoiseStream], n_modes: int):
        self.streams = list(streams)
        self.n_modes = n_modes
        self._block = -1
        self._cache = None
        self._zero = np.array([s.zero for s in self.streams])

    def _fill(self, b: int):
        cache = np.zeros((BLOCK, len(self.streams), self.n_modes))
        for r, s in enumerate(self.streams):
            if s.zero:
                continue
            for m in range(self.n_modes):
                cache[:, r, m] = s.block(m, b)
        self._cache = cache
        self._block = b

    def draw(self, step: int) -> np.ndarray:
        b, i = divmod(step, BLOCK)
        if b != self._block:
            self._fill(b)
        return self._cache[i]


def increment_hat(xi: np.ndarray, mult: np.ndarray, dt: float, n: int) -> np.ndarray:
    """Half spectrum of sum_m mult_k sqrt(dt) xi_m e_m for Gaussians xi of shape (..., 2K+1)."""
    K = (xi.shape[-1] - 1) // 2
    if K > n // 2:
        raise NoiseError(f"K={K} exceeds N/2={n // 2}")
    out = np.zeros(xi.shape[:-1] + (n // 2 + 1,), dtype=complex)
    s = np.sqrt(dt)
    out[..., 0] = mult[0] * s * xi[..., 0]
    a = xi[..., 1::2]
    b = xi[..., 2::2]
    # sqrt2 cos -> (c_k, c_-k) = (1/sqrt2, 1/sqrt2); sqrt2 sin -> (-i/sqrt2, i/sqrt2)
    out[..., 1:K + 1] = mult[1:K + 1] * s * (a - 1j * b) / np.sqrt(2)
    if K == n // 2:
        # at Nyquist the sine vanishes on the grid and the cosine has a real coefficient pair
        out[..., K] = mult[K] * s * a[..., -1] * np.sqrt(2)
    return out


def _resolve_K(stream: NoiseStream, n: int, K: int | None) -> int:
    if K is None:
        K = stream.K if stream.K is not None else default_K(n)
    if not 0 <= K <= n // 2:
        raise NoiseError(f"K must lie in [0, {n // 2}], got {K}")
    return K


def sample_correlated_increment(stream: NoiseStream, spec: MollifierSpec, dt: float, step: int = 0,
                                K: int | None = None) -> Field:
    if not dt > 0:
        raise NoiseError("dt must be positive")
    n = spec.n_points
    K = _resolve_K(stream, n, K)
    xi = stream.gaussians(step, 2 * K + 1)
    return Field(unhat(increment_hat(xi, mode_multipliers(spec, K), dt, n), n))


def sample_white_increment(stream: NoiseStream, dt: float, K: int | None = None, step: int = 0,
                           n: int = 64) -> Field:
    if not dt > 0:
        raise NoiseError("dt must be positive")
    K = _resolve_K(stream, n, K)
    xi = stream.gaussians(step, 2 * K + 1)
    return Field(unhat(increment_hat(xi, white_multipliers(K), dt, n), n))


def make_streams(seed: int, M: int, K: int | None = None, zero: bool = False) -> list[NoiseStream]:
    return [NoiseStream(seed, r, K, zero) for r in range(M)]

