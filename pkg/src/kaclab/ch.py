"""Stochastic Cahn-Hilliard dynamics and its linear/nonlinear splitting.

    u_t = d_xx[V'(u) - (D/2) u_xx] - sqrt(2) d_x xi - sqrt(2) d_x h,
    V'(u) = c u^3 - a u.

The cubic coefficient c defaults to 1/3, which is the coefficient the Kac
expansion of the IKK drift produces; c = 1 gives V(u) = u^4/4 - a u^2/2.
The linear symbol -(2 pi k)^2 [(D/2)(2 pi k)^2 - a] is integrated exactly
and only the cubic term (plus control and noise) is explicit.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .grid import Field, check_n, dealias_mask, derivative_symbol, hat, unhat, wavenumbers
from .kernel import DEFAULT_RADIUS, second_moment
from .noise import (DEFAULT_MOLLIFIER_RADIUS, GaussianSource, MollifierSpec, NoiseStream, increment_hat,
                    mode_multipliers, white_multipliers)
from .stepping import Ensemble, etd_factors, run
from .trajectory import ControlField, Trajectory

NOISE_MODES = ("white", "mollified", "off")
SCHEMES = ("semi_implicit", "ou_splitting")


class CHParamError(ValueError):
    pass


@dataclass(frozen=True)
class CHParams:
    a: float = -1.0
    D: float | None = None
    noise_mode: str = "white"
    delta: float = 0.1
    scheme: str = "semi_implicit"
    dt: float = 1e-4
    T: float = 0.5
    N: int = 64
    K: int | None = None
    stride: int = 10
    cubic: float = 1 / 3
    mollifier_radius: float = DEFAULT_MOLLIFIER_RADIUS
    kernel_radius: float = DEFAULT_RADIUS
    dealias: bool = True

    def __post_init__(self):
        if self.D is None:
            object.__setattr__(self, "D", second_moment(self.kernel_radius))
        if not self.D > 0:
            raise CHParamError("D must be positive")
        if not (self.dt > 0 and self.T > 0):
            raise CHParamError("dt and T must be positive")
        if self.noise_mode not in NOISE_MODES:
            raise CHParamError(f"noise_mode must be one of {NOISE_MODES}")
        if self.scheme not in SCHEMES:
            raise CHParamError(f"scheme must be one of {SCHEMES}")
        check_n(self.N)
        if self.K is not None and not 0 <= self.K < self.N // 2:
            raise CHParamError(f"K must lie in [0, {self.N // 2})")
        if self.stride < 1:
            raise CHParamError("stride must be >= 1")

    @property
    def truncation(self) -> int:
        return self.N // 3 if self.K is None else self.K

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def replace(self, **kw) -> "CHParams":
        return dataclasses.replace(self, **kw)

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = "ch"
        return d

    def multipliers(self) -> np.ndarray:
        K = self.truncation
        if self.noise_mode == "mollified":
            return mode_multipliers(MollifierSpec(self.delta, self.N, self.mollifier_radius), K)
        return white_multipliers(K)


@dataclass(frozen=True, eq=False)
class _Context:
    p: CHParams
    L: np.ndarray
    E: np.ndarray
    P: np.ndarray
    k2: np.ndarray
    dx: np.ndarray
    mask: np.ndarray
    mult: np.ndarray


@lru_cache(maxsize=64)
def context(p: CHParams) -> _Context:
    k2 = (2 * np.pi * wavenumbers(p.N)) ** 2
    L = -k2 * ((p.D / 2) * k2 - p.a)
    E, P = etd_factors(L, p.dt)
    mask = dealias_mask(p.N) if p.dealias else np.ones(p.N // 2 + 1)
    return _Context(p, L, E, P, k2, derivative_symbol(p.N, 1), mask, p.multipliers())


def linear_symbol(k, p: CHParams):
    k2 = (2 * np.pi * np.asarray(k)) ** 2
    return -k2 * ((p.D / 2) * k2 - p.a)


def free_energy(u: Field | np.ndarray, p: CHParams):
    """int (D/4)|u_x|^2 + V(u) dx with V(u) = c u^4/4 - a u^2/2."""
    v = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
    ux = unhat(hat(v) * derivative_symbol(v.shape[-1], 1), v.shape[-1])
    dens = (p.D / 4) * ux**2 + p.cubic * v**4 / 4 - p.a * v**2 / 2
    out = dens.mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _explicit(u, ctx: _Context, g):
    p = ctx.p
    Nh = -ctx.k2 * hat(p.cubic * u**3)
    if g is not None:
        Nh = Nh - np.sqrt(2) * ctx.dx * hat(g)
    return Nh * ctx.mask


def drift(u: np.ndarray, p: CHParams, g: np.ndarray | None = None) -> np.ndarray:
    """d_xx[V'(u) - (D/2) u_xx] (- sqrt2 g_x if g is given), in physical space."""
    ctx = context(p)
    u = np.asarray(u, dtype=float)
    return unhat(ctx.L * hat(u) + _explicit(u, ctx, g), p.N)


def _noise_source(p: CHParams, streams):
    if p.noise_mode == "off" or not streams:
        return None
    return GaussianSource(streams, 2 * p.truncation + 1)


def _semi_implicit(p: CHParams, u0: np.ndarray, streams, control: ControlField | None, M: int) -> Ensemble:
    ctx = context(p)
    src = _noise_source(p, streams)
    u = np.broadcast_to(u0, (M, p.N)).copy()

    def advance(v, k):
        uh = hat(v)
        g = control.slice(k * p.dt, v) if control is not None else None
        Nh = _explicit(v, ctx, g)
        if src is not None:
            dWh = increment_hat(src.draw(k), ctx.mult, p.dt, p.N)
            uh = uh - np.sqrt(2) * ctx.dx * dWh * ctx.mask
        return unhat(ctx.E * uh + ctx.P * Nh, p.N), [], 0.0

    return run(u, p.n_steps, p.dt, p.stride, advance, p.echo())


# ------------------------------------------------------------ OU splitting

def ou_rate(k, p: CHParams, convention: str = "model"):
    """Decay rate of mode k: (D/2)(2 pi k)^4 for 'model', bare k^4 for 'integer' (the mode-sum checks)."""
    k = np.asarray(k, dtype=float)
    if convention == "integer":
        return k**4
    return (p.D / 2) * (2 * np.pi * k) ** 4


def ou_drive(k, convention: str = "model"):
    k = np.asarray(k, dtype=float)
    return k if convention == "integer" else 2 * np.pi * k


def ou_step_std(k, p: CHParams, dt: float, mult=1.0, convention: str = "model"):
    """Per-step standard deviation of the exact transition (zero for k = 0)."""
    k = np.asarray(k, dtype=float)
    lam = ou_rate(k, p, convention)
    w = ou_drive(k, convention)
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(lam > 0, 2 * w**2 * np.asarray(mult) ** 2 * (-np.expm1(-2 * lam * dt)) / (2 * lam), 0.0)
    return np.sqrt(var)


def ou_mode_update(z_hat_k: complex, k: int, p: CHParams, gaussian: complex, dt: float,
                   mult: float = 1.0, convention: str = "model") -> complex:
    """Exact transition of one mode of dz = -(D/2) d_x^4 z dt - sqrt2 d_x dW.

    `gaussian` is complex with E|gaussian|^2 = 1.
    """
    if k == 0:
        return z_hat_k
    lam = float(ou_rate(abs(k), p, convention))
    std = float(ou_step_std(abs(k), p, dt, mult, convention))
    sign = 1.0 if k > 0 else -1.0
    return complex(np.exp(-lam * dt) * z_hat_k - 1j * sign * std * gaussian)


def _complex_gaussians(xi: np.ndarray, n: int) -> np.ndarray:
    """Map real basis Gaussians (..., 2K+1) onto half-spectrum unit complex Gaussians."""
    K = (xi.shape[-1] - 1) // 2
    out = np.zeros(xi.shape[:-1] + (n // 2 + 1,), dtype=complex)
    out[..., 1:K + 1] = (xi[..., 1::2] - 1j * xi[..., 2::2]) / np.sqrt(2)
    return out


@dataclass(eq=False)
class Decomposition:
    z: Trajectory
    w: Trajectory

    def total(self) -> Trajectory:
        return Trajectory(self.w.times, self.w.values + self.z.values, [], dict(self.w.params))


@dataclass(eq=False)
class DecompositionEnsemble:
    z: Ensemble
    w: Ensemble

    def member(self, r: int = 0) -> Decomposition:
        return Decomposition(self.z.trajectory(r), self.w.trajectory(r))

    def total(self) -> Ensemble:
        return Ensemble(self.w.times, self.w.values + self.z.values, [], dict(self.w.params))


def _split(p: CHParams, u0: np.ndarray, streams, M: int) -> DecompositionEnsemble:
    ctx = context(p)
    src = _noise_source(p, streams)
    n = p.N
    k = wavenumbers(n)
    decay = np.exp(-ou_rate(k, p) * p.dt)
    std = np.zeros(n // 2 + 1)
    K = p.truncation
    std[1:K + 1] = ou_step_std(k[1:K + 1], p, p.dt, ctx.mult[1:K + 1])
    state = {"z": np.zeros((M, n // 2 + 1), dtype=complex)}
    z_snaps = [np.zeros((M, n))]
    keep_every = p.stride
    w0 = np.broadcast_to(u0, (M, n)).copy()

    def advance(w, j):
        zh = state["z"]
        z = unhat(zh, n)
        wh = hat(w)
        Nh = (-ctx.k2 * hat(p.cubic * (w + z) ** 3) + p.a * ctx.k2 * zh) * ctx.mask
        new_w = unhat(ctx.E * wh + ctx.P * Nh, n)
        if src is not None:
            zh = decay * zh - 1j * std * _complex_gaussians(src.draw(j), n)
        else:
            zh = decay * zh
        state["z"] = zh
        if (j + 1) % keep_every == 0 or j + 1 == p.n_steps:
            z_snaps.append(unhat(zh, n))
        return new_w, [], 0.0

    w_ens = run(w0, p.n_steps, p.dt, p.stride, advance, p.echo())
    z_ens = Ensemble(w_ens.times, np.array(z_snaps), [], p.echo())
    return DecompositionEnsemble(z_ens, w_ens)


# ------------------------------------------------------------ public API

def simulate_ch_ensemble(p: CHParams, u0: Field | np.ndarray, streams: list[NoiseStream] | None,
                         control: ControlField | None = None, M: int = 1) -> Ensemble:
    u0 = u0.values if isinstance(u0, Field) else np.asarray(u0, dtype=float)
    M = len(streams) if streams else M
    if p.scheme == "ou_splitting" and control is None:
        return _split(p, u0, streams, M).total()
    return _semi_implicit(p, u0, streams, control, M)


def simulate_ch(p: CHParams, u0: Field, stream: NoiseStream | None) -> Trajectory:
    return simulate_ch_ensemble(p, u0, [stream] if stream is not None else None).trajectory(0)


def decompose_ensemble(p: CHParams, u0: Field | np.ndarray, streams: list[NoiseStream] | None,
                       M: int = 1) -> DecompositionEnsemble:
    u0 = u0.values if isinstance(u0, Field) else np.asarray(u0, dtype=float)
    M = len(streams) if streams else M
    return _split(p, u0, streams, M)


def decompose(p: CHParams, u0: Field, stream: NoiseStream | None) -> Decomposition:
    return decompose_ensemble(p, u0, [stream] if stream is not None else None).member(0)


# ------------------------------------------------------------ mode sums

def parseval_closed_form(T: float, K: int) -> float:
    k = np.arange(1, K + 1, dtype=float)
    return float(np.sum(k**2 * (-np.expm1(-2 * k**4 * T)) / (2 * k**4)))


def parseval_quadrature(T: float, K: int) -> float:
    if T == 0:
        return 0.0
    k = np.arange(1, K + 1, dtype=float)

    def f(s):
        return float(np.sum(k**2 * np.exp(-2 * k**4 * s)))

    # the integrand decays on scales 1/(2k^4); split geometrically so quad sees each scale
    edges = np.concatenate([[0.0], np.geomspace(min(1e-12, T / 2), T, 80)])
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=200)
        total += val
    return total


def parseval_gradient_integral(T: float, K: int) -> tuple[float, float]:
    """Closed form and quadrature of int_0^T sum_{k=1}^K k^2 exp(-2 k^4 s) ds."""
    if K < 1:
        raise CHParamError("K must be at least 1")
    return parseval_closed_form(T, K), parseval_quadrature(T, K)


def parseval_monte_carlo(T: float, K: int, streams: list[NoiseStream], n_steps: int = 4,
                         convention: str = "integer", p: CHParams | None = None) -> tuple[float, float]:
    """Sample z(T) by exact OU steps from z(0) = 0 and estimate the mode sum.

    Each wavenumber carries a cosine and a sine coefficient and the noise
    enters with amplitude sqrt2, so E||z(T)||^2 = 4 x (mode sum).
    Returns (estimate, standard error).
    """
    p = p or CHParams(N=max(64, 1 << int(np.ceil(np.log2(3 * K + 3)))))
    n = p.N
    if K >= n // 2:
        raise CHParamError("K must stay below N/2")
    dt = T / n_steps
    k = np.arange(1, K + 1)
    decay = np.exp(-ou_rate(k, p, convention) * dt)
    std = ou_step_std(k, p, dt, 1.0, convention)
    src = GaussianSource(streams, 2 * K + 1)
    zh = np.zeros((len(streams), K), dtype=complex)
    for j in range(n_steps):
        g = _complex_gaussians(src.draw(j), n)[:, 1:K + 1]
        zh = decay * zh - 1j * std * g
    sq = 2 * np.sum(np.abs(zh) ** 2, axis=1) / 4
    return float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(len(sq)))


def mollification_gap_closed_form(p: CHParams, delta: float) -> float:
    """sum_k 2 (1 - eta^_k)^2 (2 pi k)^2 / lam_k (T - (1 - exp(-2 lam_k T)) / (2 lam_k))."""
    K = p.truncation
    m = mode_multipliers(MollifierSpec(delta, p.N, p.mollifier_radius), K)[1:]
    k = np.arange(1, K + 1)
    lam = ou_rate(k, p)
    w2 = (2 * np.pi * k) ** 2
    return float(np.sum(2 * (1 - m) ** 2 * w2 / lam * (p.T + np.expm1(-2 * lam * p.T) / (2 * lam))))


def noise_mollification_gap(T: float, dt: float, K: int, delta: float, streams: list[NoiseStream],
                            p: CHParams | None = None) -> tuple[float, float, float]:
    """Monte Carlo E||z_delta - z||^2_{L2L2} with coupled streams.

    The difference of the two stochastic convolutions is itself an OU process
    driven by multipliers (1 - eta^_delta(k)).  Returns (estimate, standard
    error, closed form).
    """
    p = (p or CHParams()).replace(T=T, dt=dt, K=K, noise_mode="mollified", delta=delta)
    n = p.N
    k = np.arange(1, K + 1)
    m = mode_multipliers(MollifierSpec(delta, n, p.mollifier_radius), K)[1:]
    decay = np.exp(-ou_rate(k, p) * dt)
    std = ou_step_std(k, p, dt, 1.0 - m)
    src = GaussianSource(streams, 2 * K + 1)
    zh = np.zeros((len(streams), K), dtype=complex)
    acc = np.zeros(len(streams))
    prev = np.zeros(len(streams))
    for j in range(p.n_steps):
        g = _complex_gaussians(src.draw(j), n)[:, 1:K + 1]
        zh = decay * zh - 1j * std * g
        cur = 2 * np.sum(np.abs(zh) ** 2, axis=1)
        acc += 0.5 * dt * (prev + cur)
        prev = cur
    return float(acc.mean()), float(acc.std(ddof=1) / np.sqrt(len(acc))) if len(acc) > 1 else 0.0, \
        mollification_gap_closed_form(p, delta)
