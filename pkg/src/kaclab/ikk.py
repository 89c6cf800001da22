"""Conservative Kac-interaction fluctuation SPDE (module `ikk`), written in Ito form.

    u_t = g^{-2/3} u_xx - g^{-2/3} beta d_x[(1 - g^{2/3} u^2) J_g * u_x]
          - sqrt(2 eps) d_x(sigma(1 - g^{2/3} u^2) xi_delta)
          + 4 eps d_x(F1 sigma'(1 - g^{2/3} u^2)^2 g^{4/3} u^2 u_x)
          - sqrt(2) d_x(sigma_c(1 - g^{2/3} u^2) h)          (optional control h)

with g = gamma, beta = 1 + a gamma^{2/3}.  The linear nonlocal part is
diagonal in Fourier space and is integrated exactly; the cubic Kac
transport, the Ito correction, the control and the noise are explicit.

The Ito correction is a nonnegative diffusion that becomes stiff where u
approaches +-gamma^{-1/3}.  Its largest diffusivity s is moved into the
implicit part (+s u_xx implicit, -s u_xx explicit), which keeps the
scheme stable without restricting dt.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .entropy import DiffusionCoefficient, sigma_eval, sigma_prime_eval
from .grid import Field, check_n, dealias_mask, derivative_symbol, hat, sobolev_weights, unhat, wavenumbers
from .kernel import DEFAULT_RADIUS, Kernel, make_bump_kernel, moment, rescale, second_moment
from .noise import (DEFAULT_MOLLIFIER_RADIUS, F1_constant, GaussianSource, MollifierSpec, NoiseStream,
                    increment_hat, mode_multipliers)
from .stepping import Ensemble, NumericalAbort, StepReport, clamp, etd_factors, run
from .trajectory import ControlField, Trajectory


class ParamError(ValueError):
    pass


@dataclass(frozen=True)
class IKKParams:
    gamma: float
    delta: float = 0.1
    a: float = -1.0
    epsilon: float = 1.0
    coefficient: DiffusionCoefficient = field(default_factory=DiffusionCoefficient)
    dt: float = 1e-4
    T: float = 0.5
    N: int = 64
    K: int | None = None
    clamp_margin: float = 1e-6
    stride: int = 10
    kernel_radius: float = DEFAULT_RADIUS
    mollifier_radius: float = DEFAULT_MOLLIFIER_RADIUS
    dealias: bool = True

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ParamError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not self.delta > 0:
            raise ParamError("delta must be positive")
        if self.epsilon < 0:
            raise ParamError("epsilon must be nonnegative")
        if not (self.dt > 0 and self.T > 0):
            raise ParamError("dt and T must be positive")
        check_n(self.N)
        if self.K is not None and not 0 <= self.K <= self.N // 2:
            raise ParamError(f"K must lie in [0, {self.N // 2}]")
        if not self.clamp_margin > 0 or self.stride < 1:
            raise ParamError("clamp_margin must be positive and stride >= 1")

    @property
    def truncation(self) -> int:
        return self.N // 3 if self.K is None else self.K

    @property
    def beta(self) -> float:
        return 1.0 + self.a * self.gamma ** (2 / 3)

    @property
    def bound(self) -> float:
        return self.gamma ** (-1 / 3)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def replace(self, **kw) -> "IKKParams":
        return dataclasses.replace(self, **kw)

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = "ikk"
        return d


@dataclass(frozen=True, eq=False)
class _Context:
    p: IKKParams
    J: Kernel
    Jg: Kernel
    Jhat: np.ndarray
    D: float
    L: np.ndarray
    E: np.ndarray
    P: np.ndarray
    mask: np.ndarray
    dx: np.ndarray  # symbol of d/dx
    k2: np.ndarray  # (2 pi k)^2
    mult: np.ndarray
    F1: float


@lru_cache(maxsize=64)
def context(p: IKKParams) -> _Context:
    J = make_bump_kernel(p.kernel_radius, p.N)
    Jg = rescale(J, p.gamma)
    Jhat = Jg.multipliers()
    L = linear_symbol(wavenumbers(p.N), p, Jg)
    E, P = etd_factors(L, p.dt)
    mask = dealias_mask(p.N) if p.dealias else np.ones(p.N // 2 + 1)
    K = p.truncation
    mult = mode_multipliers(MollifierSpec(p.delta, p.N, p.mollifier_radius), K)
    return _Context(p, J, Jg, Jhat, second_moment(p.kernel_radius), L, E, P, mask,
                    derivative_symbol(p.N, 1), (2 * np.pi * wavenumbers(p.N)) ** 2, mult, F1_constant(mult))


def linear_symbol(k, p: IKKParams, J_gamma: Kernel):
    """-gamma^{-2/3} (2 pi k)^2 [1 - beta J_gamma^(k)]."""
    k = np.abs(np.asarray(k))
    Jhat = J_gamma.multipliers()[k]
    out = -p.gamma ** (-2 / 3) * (2 * np.pi * k) ** 2 * (1.0 - p.beta * Jhat)
    return out if out.ndim else float(out)


def weight(u: np.ndarray, gamma: float) -> np.ndarray:
    return np.maximum(1.0 - gamma ** (2 / 3) * u**2, 0.0)


def correction_diffusivity(u: np.ndarray, p: IKKParams, F1: float) -> np.ndarray:
    """4 eps F1 sigma'(1 - g^{2/3} u^2)^2 g^{4/3} u^2."""
    if p.epsilon == 0:
        return np.zeros_like(u)
    sp = sigma_prime_eval(p.coefficient, weight(u, p.gamma))
    return 4 * p.epsilon * F1 * sp**2 * p.gamma ** (4 / 3) * u**2


def _explicit(u, ctx: _Context, g, coeff_c: DiffusionCoefficient):
    """Half spectrum of the explicit drift, the stabilizing diffusivity, and term sizes."""
    p = ctx.p
    n = p.N
    uh = hat(u)
    ux = unhat(uh * ctx.dx, n)
    Jux = unhat(uh * ctx.dx * ctx.Jhat, n)
    kac = p.beta * ctx.dx * hat(u**2 * Jux)
    d = correction_diffusivity(u, p, ctx.F1)
    s = d.max(axis=-1) if d.size else np.zeros(u.shape[:-1])
    corr = ctx.dx * hat(d * ux) + (s[..., None] * ctx.k2) * uh
    total = kac + corr
    norms = {"kac": float(np.abs(kac).max()), "correction": float(np.abs(corr).max())}
    if g is not None:
        ctrl = -np.sqrt(2) * ctx.dx * hat(sigma_eval(coeff_c, weight(u, p.gamma)) * g)
        total = total + ctrl
        norms["control"] = float(np.abs(ctrl).max())
    return total * ctx.mask, s, norms


def drift(u: np.ndarray, p: IKKParams, g: np.ndarray | None = None,
          coeff_c: DiffusionCoefficient | None = None) -> np.ndarray:
    """Full deterministic drift (linear + Kac transport + Ito correction + control) in physical space."""
    ctx = context(p)
    coeff_c = p.coefficient if coeff_c is None else coeff_c
    u = np.asarray(u, dtype=float)
    Nh, s, _ = _explicit(u, ctx, g, coeff_c)
    Nh = Nh - (s[..., None] * ctx.k2) * hat(u) * ctx.mask
    return unhat(ctx.L * hat(u) + Nh, p.N)


def _cfl(u, ctx: _Context) -> float:
    """dt over the forward-Euler limit of the Kac transport not absorbed by exact damping."""
    p = ctx.p
    c = p.beta * np.max(u**2) * np.max(np.abs(ctx.Jhat)) if p.beta > 0 else 0.0
    excess = np.max((c * ctx.k2 + ctx.L) * ctx.mask)
    return float(max(excess, 0.0) * p.dt / 2)


def _advance(u, ctx: _Context, dW, g, t_next, coeff_c):
    p = ctx.p
    n = p.N
    Nh, s, norms = _explicit(u, ctx, g, coeff_c)
    if np.any(s > 0):
        E, P = etd_factors(ctx.L - s[:, None] * ctx.k2, p.dt)
    else:
        E, P = ctx.E, ctx.P
    uh = hat(u)
    if dW is not None and p.epsilon > 0:
        sig = sigma_eval(p.coefficient, weight(u, p.gamma))
        uh = uh - np.sqrt(2 * p.epsilon) * ctx.dx * hat(sig * dW) * ctx.mask
    new = unhat(E * uh + P * Nh, n)
    if not np.all(np.isfinite(new)):
        return new, [], norms
    new, events = clamp(new, p.bound, p.clamp_margin * p.bound, t_next)
    return new, events, norms


def step(u: Field, p: IKKParams, noise_increment: Field | None = None,
         control_slice: Field | None = None) -> tuple[Field, StepReport]:
    """One step from u; the increment is a ready-made dW field (already scaled by sqrt(dt))."""
    ctx = context(p)
    v = u.values[None, :]
    g = None if control_slice is None else control_slice.values[None, :]
    dW = None if noise_increment is None else noise_increment.values[None, :]
    new, events, norms = _advance(v, ctx, dW, g, p.dt, p.coefficient)
    if not np.all(np.isfinite(new)):
        raise NumericalAbort("non-finite state after a single step")
    rep = StepReport(float(np.abs(new).max()), len(events), norms, _cfl(v, ctx))
    return Field(new[0]), rep


def simulate_ensemble(p: IKKParams, u0: Field | np.ndarray, streams: list[NoiseStream] | None,
                      control: ControlField | None = None, coeff_c: DiffusionCoefficient | None = None,
                      M: int = 1) -> Ensemble:
    """Advance a batch of replicates together; replicate r uses streams[r]."""
    ctx = context(p)
    coeff_c = p.coefficient if coeff_c is None else coeff_c
    u0 = u0.values if isinstance(u0, Field) else np.asarray(u0, dtype=float)
    if np.any(np.abs(u0) > p.bound):
        raise ParamError(f"initial data leaves [-{p.bound:.6g}, {p.bound:.6g}]")
    M = len(streams) if streams else M
    u = np.broadcast_to(u0, (M, p.N)).copy()
    src = GaussianSource(streams, 2 * p.truncation + 1) if streams and p.epsilon > 0 else None
    max_cfl = [0.0]

    def advance(v, k):
        dW = unhat(increment_hat(src.draw(k), ctx.mult, p.dt, p.N), p.N) if src is not None else None
        g = control.slice(k * p.dt, v) if control is not None else None
        if k % 50 == 0:
            max_cfl[0] = max(max_cfl[0], _cfl(v, ctx))
        new, ev, _ = _advance(v, ctx, dW, g, (k + 1) * p.dt, coeff_c)
        return new, ev, 0.0

    ens = run(u, p.n_steps, p.dt, p.stride, advance, p.echo())
    ens.max_cfl = max_cfl[0]
    return ens


def simulate(p: IKKParams, u0: Field, stream: NoiseStream | None, control: ControlField | None = None) -> Trajectory:
    return simulate_ensemble(p, u0, [stream] if stream is not None else None, control).trajectory(0)


# ------------------------------------------------------------ diagnostics

def remainder_fields(u: Field | np.ndarray, p: IKKParams, J_gamma: Kernel | None = None):
    """The four remainders of the rewrite around the Cahn-Hilliard limit, as arrays or Fields."""
    ctx = context(p)
    Jg = ctx.Jg if J_gamma is None else J_gamma
    as_field = isinstance(u, Field)
    v = u.values if as_field else np.asarray(u, dtype=float)
    n = p.N
    g23 = p.gamma ** (2 / 3)
    uh = hat(v)
    k2 = ctx.k2
    dx = ctx.dx
    D = ctx.D
    R1 = unhat(-(D / 2) * p.a * g23 * k2**2 * uh, n) + (p.a / 3) * g23 * unhat(-k2 * hat(v**3), n)
    Jhat = Jg.multipliers()
    ux = unhat(uh * dx, n)
    R2 = p.beta * unhat(dx * hat(v**2 * unhat(uh * dx * (Jhat - 1.0), n)), n)
    # the discrete second moment of J_gamma stands in for gamma^{2/3} D so the Taylor cancellation is exact
    m2 = moment(Jg, 2)
    defect = dx * (Jhat - 1.0 + (m2 / 2) * k2) * uh
    R3 = -p.gamma ** (-2 / 3) * p.beta * unhat(dx * defect, n)
    # R4 is defined at unit intensity so it stays meaningful for eps = 0 diagnostics
    d = correction_diffusivity(v, p.replace(epsilon=1.0), ctx.F1)
    R4 = unhat(dx * hat(d * ux), n)
    out = (R1, R2, R3, R4)
    return tuple(Field(r) for r in out) if as_field else out


def time_integral(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    return np.trapezoid(values, times, axis=0)


def negative_sobolev_norm(values: np.ndarray, beta: float) -> np.ndarray:
    return np.sqrt(np.sum(sobolev_weights(values.shape[-1], -beta) * np.abs(hat(values)) ** 2, axis=-1))


def time_regularity_norm(traj: Trajectory, alpha: float = 0.25, beta: float = 7.0) -> float:
    """Discrete W^{alpha,2}([0,T]; H^{-beta}) norm over the snapshots."""
    if not 0 < alpha < 0.5 or not beta > 0:
        raise ParamError("need alpha in (0, 1/2) and beta > 0")
    if len(traj) < 4:
        raise ParamError("time regularity needs at least 4 snapshots")
    t = traj.times
    dt = np.diff(t)
    w = np.empty_like(t)
    w[0], w[-1] = dt[0] / 2, dt[-1] / 2
    w[1:-1] = (dt[:-1] + dt[1:]) / 2
    c = hat(traj.values) * np.sqrt(sobolev_weights(traj.n_points, -beta))
    sq = np.sum(np.abs(c) ** 2, axis=1)
    l2 = float(np.sum(w * sq))
    gram = np.real(c @ np.conj(c).T)
    dist = np.maximum(sq[:, None] + sq[None, :] - 2 * gram, 0.0)
    tt = np.abs(t[:, None] - t[None, :])
    off = ~np.eye(t.size, dtype=bool)
    gag = float(np.sum(dist[off] / tt[off] ** (1 + 2 * alpha) * (w[:, None] * w[None, :])[off]))
    return float(np.sqrt(l2 + gag))
