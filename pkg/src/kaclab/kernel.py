"""Kac interaction kernel: a smooth even bump of unit mass and its rescalings."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .grid import Field, GridError, grid_points, hat, derivative_symbol, unhat, dealias_mask

DEFAULT_RADIUS = 0.25


class KernelError(ValueError):
    pass


def bump_profile(x: np.ndarray, radius: float) -> np.ndarray:
    """Unnormalized exp(-1/(1-(x/r)^2)) on |x| < r, zero elsewhere."""
    s = np.abs(np.asarray(x, dtype=float)) / radius
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass(frozen=True, eq=False)
class Kernel:
    samples: Field
    support_radius: float
    base_radius: float
    gamma: float
    normalization: float

    @property
    def n_points(self) -> int:
        return self.samples.n_points

    def multipliers(self) -> np.ndarray:
        """Fourier coefficients J^(k), k = 0..N/2 (real by evenness)."""
        return hat(self.samples.values).real

    def descriptor(self) -> str:
        return json.dumps({"radius": self.base_radius, "gamma": self.gamma}, sort_keys=True)

    @classmethod
    def from_descriptor(cls, line: str, n: int) -> "Kernel":
        d = json.loads(line)
        return rescale(make_bump_kernel(d["radius"], n), d["gamma"])


def _build(radius: float, n: int, base_radius: float, gamma: float) -> Kernel:
    x = grid_points(n)
    b = bump_profile(x, radius)
    z = b.sum() / n
    return Kernel(Field(b / z), radius, base_radius, gamma, z)


def make_bump_kernel(radius: float = DEFAULT_RADIUS, n: int = 64) -> Kernel:
    if not 0 < radius < 0.5:
        raise KernelError(f"kernel radius must lie in (0, 1/2), got {radius}")
    if radius < 4.0 / n:
        raise KernelError(f"radius {radius} spans fewer than 4 cells at N={n}")
    return _build(radius, n, radius, 1.0)


def required_points(radius: float, gamma: float) -> int:
    n = 8
    while gamma ** (1 / 3) * radius < 4.0 / n:
        n *= 2
    return n


def rescale(J: Kernel, gamma: float) -> Kernel:
    """gamma^{-1/3} J(gamma^{-1/3} x), renormalized to unit mass on the grid."""
    if not 0 < gamma <= 1:
        raise KernelError(f"gamma must lie in (0, 1], got {gamma}")
    n = J.n_points
    r = J.base_radius * gamma ** (1 / 3)
    if r < 4.0 / n:
        raise KernelError(
            f"rescaled kernel radius {r:.4g} is under-resolved at N={n}; "
            f"need N >= {required_points(J.base_radius, gamma)}"
        )
    if gamma == 1.0:
        return J
    return _build(r, n, J.base_radius, gamma)


def moment(J: Kernel, p: int) -> float:
    if p not in (0, 1, 2, 3, 4):
        raise KernelError(f"moment order must be in 0..4, got {p}")
    x = grid_points(J.n_points)
    return float(np.sum(J.samples.values * np.abs(x) ** p) / J.n_points)


def second_moment(radius: float = DEFAULT_RADIUS, n: int = 1024) -> float:
    """D = int J |x|^2 for the unscaled bump, on a fine grid."""
    return moment(make_bump_kernel(radius, n), 2)


def top_third_ratio(values: np.ndarray) -> float:
    c = np.abs(hat(values))
    peak = c.max()
    if peak == 0:
        return 0.0
    return float(c[dealias_mask(values.shape[-1]) == 0].max(initial=0.0) / peak)


@dataclass(frozen=True)
class DefectResult:
    field: Field
    under_resolved: bool


def taylor_defect(J_gamma: Kernel, f: Field, gamma: float, D: float) -> DefectResult:
    """J_gamma * f' - f' - gamma^{2/3} (D/2) f'''."""
    if J_gamma.n_points != f.n_points:
        raise GridError("kernel and field live on different grids")
    n = f.n_points
    mult = J_gamma.multipliers() - 1.0 + gamma ** (2 / 3) * (D / 2) * (2 * np.pi * np.arange(n // 2 + 1)) ** 2
    out = unhat(hat(f.values) * derivative_symbol(n, 1) * mult, n)
    return DefectResult(Field(out), top_third_ratio(f.values) > 1e-8)
