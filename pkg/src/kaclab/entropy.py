"""Rescaled mixing entropy, diffusion coefficients and dissipation diagnostics.

With s = gamma^{1/3} z the entropy density is
    Psi(z) = gamma^{-1/3}/2 * [(1+s)log(1+s) + (1-s)log(1-s) - 2],
defined for |z| <= gamma^{-1/3}.  A regularization dbar > 0 replaces the
1 inside the logarithms by 1+dbar and rescales the prefactor by 1/(1+dbar).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import xlogy

from .grid import Field, hat, spectral_derivative, unhat
from .kernel import Kernel
from .trajectory import Trajectory


class EntropyError(ValueError):
    pass


@dataclass(frozen=True)
class EntropyParams:
    gamma: float
    dbar: float = 0.0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise EntropyError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.dbar < 0:
            raise EntropyError("regularization must be nonnegative")

    @property
    def bound(self) -> float:
        return self.gamma ** (-1 / 3)


def _check(zeta, p: EntropyParams):
    z = np.asarray(zeta, dtype=float)
    b = p.bound * (1 + p.dbar)
    over = np.abs(z) > b * (1 + 1e-12)
    if np.any(over):
        worst = z.flat[int(np.argmax(np.abs(z)))]
        raise EntropyError(f"value {worst!r} lies outside [-{b:.6g}, {b:.6g}]")
    return np.clip(z, -b, b)


def psi(zeta, p: EntropyParams):
    """Entropy density Psi_gamma."""
    z = _check(zeta, p)
    g3 = p.gamma ** (1 / 3)
    c = 1.0 + p.dbar
    s = g3 * z
    out = (xlogy(c + s, c + s) + xlogy(c - s, c - s) - 2.0) / (2 * c * g3)
    return out if out.ndim else float(out)


def psi_prime(zeta, p: EntropyParams):
    """First derivative psi_gamma = log((c+s)/(c-s)) / (2c)."""
    z = _check(zeta, p)
    g3 = p.gamma ** (1 / 3)
    c = 1.0 + p.dbar
    s = g3 * z
    with np.errstate(divide="ignore"):
        out = (np.log(c + s) - np.log(c - s)) / (2 * c)
    return out if out.ndim else float(out)


def psi_second(zeta, p: EntropyParams):
    """gamma^{1/3} / (c^2 - gamma^{2/3} z^2)."""
    z = _check(zeta, p)
    g3 = p.gamma ** (1 / 3)
    c = 1.0 + p.dbar
    with np.errstate(divide="ignore"):
        out = g3 / (c**2 - (g3 * z) ** 2)
    return out if out.ndim else float(out)


def entropy_integral(u: Field, p: EntropyParams) -> float:
    return float(np.mean(psi(u.values, p)))


# ------------------------------------------------------------ coefficients

def _h(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _dh(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def cutoff(z):
    """Smooth step: 1 on (-inf, 2], 0 on [3, inf)."""
    a, b = _h(3.0 - z), _h(z - 2.0)
    return a / (a + b)


def cutoff_prime(z):
    a, b = _h(3.0 - z), _h(z - 2.0)
    da, db = -_dh(3.0 - z), _dh(z - 2.0)
    return (da * b - a * db) / (a + b) ** 2


SMOOTH_N = 64
SQRT_FLOOR = 1e-12


@dataclass(frozen=True)
class DiffusionCoefficient:
    """variant: 'smooth' (the family at n=64), 'family' (uses n) or 'sqrt' (experimental)."""

    variant: str = "smooth"
    n: int = SMOOTH_N

    def __post_init__(self):
        if self.variant not in ("smooth", "family", "sqrt"):
            raise EntropyError(f"unknown coefficient variant {self.variant!r}")
        if self.variant == "family" and self.n < 2:
            raise EntropyError("family index n must be at least 2 so that |sigma| <= 2 sqrt(z)")

    @property
    def index(self) -> int:
        return SMOOTH_N if self.variant == "smooth" else self.n

    def amplitude(self) -> float:
        r = 1.0 / self.index
        return 1.0 / (np.sqrt(1.0 + r) - np.sqrt(r))

    @property
    def experimental(self) -> bool:
        return self.variant == "sqrt"


def _nonneg(zeta):
    z = np.asarray(zeta, dtype=float)
    if np.any(z < 0):
        raise EntropyError(f"coefficient argument must be nonnegative, got min {z.min()!r}")
    return z


def sigma_eval(coeff: DiffusionCoefficient, zeta):
    z = _nonneg(zeta)
    if coeff.variant == "sqrt":
        out = np.sqrt(np.maximum(z, SQRT_FLOOR))
        out = np.where(z == 0, 0.0, out)
    else:
        r = 1.0 / coeff.index
        out = coeff.amplitude() * cutoff(z) * (np.sqrt(z + r) - np.sqrt(r))
    return out if out.ndim else float(out)


def sigma_prime_eval(coeff: DiffusionCoefficient, zeta):
    z = _nonneg(zeta)
    if coeff.variant == "sqrt":
        out = 0.5 / np.sqrt(np.maximum(z, SQRT_FLOOR))
    else:
        r = 1.0 / coeff.index
        root = np.sqrt(z + r)
        out = coeff.amplitude() * (cutoff_prime(z) * (root - np.sqrt(r)) + cutoff(z) * 0.5 / root)
    return out if out.ndim else float(out)


def sigma_prime_sup(coeff: DiffusionCoefficient) -> float:
    z = np.linspace(0.0, 3.0, 30001)
    return float(np.max(np.abs(sigma_prime_eval(coeff, z))))


# ------------------------------------------------------------ dissipation

@dataclass
class DissipationReport:
    times: np.ndarray
    entropy: np.ndarray
    dissipation: np.ndarray  # gamma^{-1/3} int |u_x|^2 / (1 - gamma^{2/3} u^2), per time
    cross: np.ndarray  # gamma^{-1/3} beta int u_x (J * u_x), per time
    cross_raw: np.ndarray  # int u_x (J * u_x)
    grad_sq: np.ndarray  # ||u_x||^2
    sup_entropy: float
    dissipation_integral: float
    cross_integral: float
    warnings: list = field(default_factory=list)

    @property
    def cross_bound_holds(self) -> bool:
        return bool(np.all(self.cross_raw <= self.grad_sq * (1 + 1e-12) + 1e-14))

    def rows(self):
        return [(float(t), float(e), float(d), float(c))
                for t, e, d, c in zip(self.times, self.entropy, self.dissipation, self.cross)]


def dissipation_report(traj: Trajectory, p: EntropyParams, J_gamma: Kernel, a: float | None = None) -> DissipationReport:
    if a is None:
        a = float(traj.params.get("a", -1.0))
    g = p.gamma
    beta = 1.0 + a * g ** (2 / 3)
    u = traj.values
    n = u.shape[1]
    ux = spectral_derivative(u, 1)
    Jux = unhat(hat(ux) * J_gamma.multipliers(), n)
    ent = np.array([entropy_integral(Field(v), p) for v in u])
    weight = 1.0 - g ** (2 / 3) * u**2
    warnings = []
    if np.any(weight <= 0):
        warnings.append("weight vanishes somewhere; dissipation density is infinite there")
    with np.errstate(divide="ignore"):
        diss = g ** (-1 / 3) * np.mean(ux**2 / np.maximum(weight, 1e-300), axis=1)
    cross_raw = np.mean(ux * Jux, axis=1)
    grad_sq = np.mean(ux**2, axis=1)
    cross = g ** (-1 / 3) * beta * cross_raw
    t = traj.times
    integ = (lambda y: float(np.trapezoid(y, t))) if t.size > 1 else (lambda y: 0.0)
    rep = DissipationReport(t, ent, diss, cross, cross_raw, grad_sq, float(ent.max()),
                            integ(diss), integ(cross), warnings)
    if not rep.cross_bound_holds:
        rep.warnings.append("kernel cross-term exceeded ||u_x||^2")
    return rep


def initial_entropy_ratio(u0: Field, gamma: float) -> float:
    """(int Psi(u0) + gamma^{-1/3}) / gamma^{1/3}; bounded ratios are what the scaling asks for."""
    p = EntropyParams(gamma)
    return (entropy_integral(u0, p) + p.bound) / gamma ** (1 / 3)
