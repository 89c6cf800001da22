"""Controlled deterministic dynamics and minimal-norm control recovery.

Given a trajectory, the drift residual r = u_t - drift(u) must equal the
control term.  For Cahn-Hilliard, -sqrt2 g_x = r has the minimal-norm
solution g = -antiderivative(r)/sqrt2.  For IKK, -sqrt2 d_x(sqrt(w) g) = r
with w = 1 - gamma^{2/3} u^2 is solved in the form g = sqrt(w) Psi_x where
d_x(w Psi_x) = -r/sqrt2, a weighted periodic elliptic problem.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ch, ikk
from .entropy import DiffusionCoefficient
from .grid import Field, antiderivative_array, hat, sobolev_weights, spectral_derivative
from .trajectory import ControlField, FeedbackControl, FunctionControl, Trajectory

log = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-6
SQRT = DiffusionCoefficient("sqrt")


class RecoveryError(ValueError):
    pass


@dataclass
class RateValue:
    value: float
    control: ControlField
    residual_norm: float  # ||r + control term||_{L2L2} / ||r||_{L2L2}
    elliptic_residual: float = 0.0
    warnings: list = field(default_factory=list)


# ------------------------------------------------------------ solvers

def solve_skeleton_ch(u0: Field, g, p: ch.CHParams) -> Trajectory:
    """u_t = d_xx[V'(u) - (D/2) u_xx] - sqrt2 g_x, noise off."""
    q = p.replace(noise_mode="off", scheme="semi_implicit")
    return ch.simulate_ch_ensemble(q, u0, None, control=g).trajectory(0)


def solve_skeleton_ikk(u0: Field, g, p: ikk.IKKParams, coefficient: DiffusionCoefficient | None = None) -> Trajectory:
    """IKK with eps = 0 and control term -sqrt2 d_x(sqrt(1 - gamma^{2/3} u^2) g)."""
    q = p.replace(epsilon=0.0)
    return ikk.simulate_ensemble(q, u0, None, control=g, coeff_c=coefficient or SQRT).trajectory(0)


# ------------------------------------------------------------ recovery helpers

def _centered(traj: Trajectory):
    if len(traj) < 3:
        raise RecoveryError("control recovery needs at least 3 snapshots")
    t, u = traj.times, traj.values
    ut = (u[2:] - u[:-2]) / (t[2:] - t[:-2])[:, None]
    return t[1:-1], u[1:-1], ut


def _time_integral(values: np.ndarray, times: np.ndarray, t0: float, t1: float) -> float:
    """Trapezoid over interior slices, extended to [t0, t1] with the end slices held constant."""
    total = float(np.trapezoid(values, times)) if times.size > 1 else 0.0
    return total + values[0] * (times[0] - t0) + values[-1] * (t1 - times[-1])


def recover_control_ch(traj: Trajectory, p: ch.CHParams) -> tuple[ControlField, RateValue]:
    q = p.replace(noise_mode="off")
    times, u, ut = _centered(traj)
    r = ut - ch.drift(u, q)
    means = r.mean(axis=1)
    scale = max(1.0, float(np.sqrt(np.mean(r**2))))
    if np.max(np.abs(means)) > 1e-6 * scale:
        j = int(np.argmax(np.abs(means)))
        raise RecoveryError(f"drift residual has mean {means[j]:.3e} at t={times[j]:.6g}; mass is leaking upstream")
    r = r - means[:, None]
    g = -antiderivative_array(r) / np.sqrt(2)
    resid = r + np.sqrt(2) * spectral_derivative(g, 1)
    rnorm = np.sqrt(np.mean(r**2)) or 1.0
    sq = np.mean(g**2, axis=1)
    value = float(0.5 * _time_integral(sq, times, traj.times[0], traj.times[-1]))
    control = ControlField(times, g)
    rel = float(np.sqrt(np.mean(resid**2)) / rnorm)
    return control, RateValue(value, control, rel)


def weighted_solve(w_half: np.ndarray, f: np.ndarray):
    """Solve (w_{j+1/2} D+Psi_j - w_{j-1/2} D+Psi_{j-1}) / h = f_j periodically, mean(Psi) = 0.

    The periodic tridiagonal system is solved directly: the flux
    q = w D+Psi has q_{j+1/2} - q_{j-1/2} = h f_j, so q = Q + c with Q the
    running sum, and c is fixed by requiring the increments of Psi to sum
    to zero around the circle.  Returns (Psi, flux q at half nodes).
    """
    n = f.shape[-1]
    h = 1.0 / n
    Q = h * np.cumsum(f, axis=-1)
    c = -np.sum(Q / w_half, axis=-1) / np.sum(1.0 / w_half, axis=-1)
    q = Q + c[..., None]
    incr = h * q / w_half  # Psi_{j+1} - Psi_j
    psi = np.concatenate([np.zeros(f.shape[:-1] + (1,)), np.cumsum(incr, axis=-1)[..., :-1]], axis=-1)
    psi -= psi.mean(axis=-1, keepdims=True)
    return psi, q


def elliptic_residual(w_half: np.ndarray, psi: np.ndarray, f: np.ndarray) -> np.ndarray:
    n = f.shape[-1]
    h = 1.0 / n
    flux = w_half * (np.roll(psi, -1, axis=-1) - psi) / h
    lhs = (flux - np.roll(flux, 1, axis=-1)) / h
    scale = np.maximum(np.max(np.abs(f), axis=-1), 1e-300)
    return np.max(np.abs(lhs - f), axis=-1) / scale


def recover_control_ikk(traj: Trajectory, p: ikk.IKKParams, weight_floor: float = WEIGHT_FLOOR
                        ) -> tuple[ControlField, RateValue]:
    q = p.replace(epsilon=0.0)
    times, u, ut = _centered(traj)
    r = ut - ikk.drift(u, q)
    w = 1.0 - p.gamma ** (2 / 3) * u**2
    if np.min(w) < weight_floor:
        m, j = np.unravel_index(int(np.argmin(w)), w.shape)
        raise RecoveryError(f"weight {w[m, j]:.3e} below floor at t={times[m]:.6g}, x-index {j}")
    warnings = []
    means = r.mean(axis=1)
    if np.max(np.abs(means)) > 1e-6 * max(1.0, float(np.sqrt(np.mean(r**2)))):
        raise RecoveryError(f"drift residual has mean {np.max(np.abs(means)):.3e}")
    f = -(r - means[:, None]) / np.sqrt(2)
    w_half = 0.5 * (w + np.roll(w, -1, axis=1))
    psi, flux = weighted_solve(w_half, f)
    if not np.all(np.isfinite(psi)):
        raise RecoveryError("singular weighted elliptic solve")
    ell = float(np.max(elliptic_residual(w_half, psi, f)))
    g_half = flux / np.sqrt(w_half)
    g = 0.5 * (g_half + np.roll(g_half, 1, axis=1))
    dens = np.mean(flux**2 / w_half, axis=1)  # w |Psi_x|^2 at half nodes
    value = float(0.5 * _time_integral(dens, times, traj.times[0], traj.times[-1]))
    control = ControlField(times, g)
    return control, RateValue(value, control, 0.0, ell, warnings)


def project_mean(g: ControlField) -> ControlField:
    means = g.values.mean(axis=1)
    if np.any(np.abs(means) > 1e-12):
        log.warning("control slices carry a spatial mean (max %.3e); projecting it out", np.max(np.abs(means)))
    return ControlField(g.times, g.values - means[:, None])


# ------------------------------------------------------------ experiments

def l2l2_distance(a: Trajectory | np.ndarray, b: Trajectory | np.ndarray, times: np.ndarray | None = None) -> float:
    if isinstance(a, Trajectory):
        times = a.times
        a = a.values
    if isinstance(b, Trajectory):
        b = b.values
    return float(np.sqrt(np.trapezoid(np.mean((a - b) ** 2, axis=-1), times, axis=0)))


@dataclass
class StabilityReport:
    m_values: list
    distances: list


def stability_experiment(g, h: Field, m_values: list, u0: Field, p: ch.CHParams) -> StabilityReport:
    """Distances ||u_m - u||_{L2L2} for controls g + sin(2 pi m t) h."""
    if list(m_values) != sorted(m_values):
        raise ValueError("m_values must be increasing")
    base = solve_skeleton_ch(u0, g, p)
    out = []
    for m in m_values:
        gm = FunctionControl(lambda t, x, m=m: g.slice(t) + np.sin(2 * np.pi * m * t) * h.values, p.N)
        out.append(l2l2_distance(solve_skeleton_ch(u0, gm, p), base))
    return StabilityReport(list(m_values), out)


@dataclass
class GammaRow:
    gamma: float
    distance: float
    rate_ikk: float
    rate_ch: float
    relative_gap: float
    entropy_ratio: float


def gamma_convergence_experiment(u0: Field, g, gammas: list, p_ikk: ikk.IKKParams, p_ch: ch.CHParams,
                                 initial=None) -> list[GammaRow]:
    """Recovery sequence u_gamma = skeleton IKK from u_{gamma,0} against the CH skeleton from u0.

    `initial(gamma)` gives u_{gamma,0}; by default u_{gamma,0} = u0.
    """
    from .entropy import initial_entropy_ratio

    u = solve_skeleton_ch(u0, g, p_ch)
    _, rate_ch = recover_control_ch(u, p_ch)
    rows = []
    for gamma in gammas:
        ug0 = initial(gamma) if initial is not None else u0
        q = p_ikk.replace(gamma=gamma)
        ug = solve_skeleton_ikk(ug0, g, q)
        _, rate = recover_control_ikk(ug, q)
        gap = abs(rate.value - rate_ch.value) / max(rate_ch.value, 1e-8)
        rows.append(GammaRow(gamma, l2l2_distance(ug, u), rate.value, rate_ch.value, gap,
                             initial_entropy_ratio(ug0, gamma)))
    return rows


def mollified_initial_data(u0: Field, gamma: float, radius: float = 0.25) -> Field:
    """u0 smoothed by the rescaled Kac kernel, an admissible family converging to u0 as gamma -> 0."""
    from .grid import convolve
    from .kernel import make_bump_kernel, rescale

    J = rescale(make_bump_kernel(radius, u0.n_points), gamma)
    out = convolve(u0, J.samples)
    if out.sup_norm() >= gamma ** (-1 / 3):
        raise RecoveryError("mollified initial data is not admissible at this gamma")
    return out


def uniqueness_constant(u10: Field, u20: Field, g, p: ch.CHParams) -> float:
    """Fitted C(T) in ||u1-u2||^2_{L2L2} <= C ||u10-u20||^2_{H^-1 (homogeneous)} + <u10-u20,1>^2 T."""
    a = solve_skeleton_ch(u10, g, p)
    b = solve_skeleton_ch(u20, g, p)
    d = (u10 - u20).values
    c = hat(d)
    k = np.arange(c.size)
    wts = sobolev_weights(d.size, 0.0)
    with np.errstate(divide="ignore"):
        inv = np.where(k > 0, 1.0 / (2 * np.pi * k) ** 2, 0.0)
    hm1 = float(np.sum(wts * inv * np.abs(c) ** 2))
    lhs = l2l2_distance(a, b) ** 2 - d.mean() ** 2 * p.T
    return lhs / hm1 if hm1 > 0 else 0.0


__all__ = [
    "RateValue", "RecoveryError", "solve_skeleton_ch", "solve_skeleton_ikk", "recover_control_ch",
    "recover_control_ikk", "weighted_solve", "stability_experiment", "gamma_convergence_experiment",
    "mollified_initial_data", "uniqueness_constant", "project_mean", "l2l2_distance", "FeedbackControl",
]
