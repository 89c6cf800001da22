"""Shared exponential-Euler machinery for the pseudospectral solvers.

A step advances the half spectrum as
    u_hat <- E * (u_hat + noise_hat) + P * N_hat,   E = exp(L dt),  P = dt phi1(L dt),
where L is diagonal (real, <= 0 in the regimes of interest), N the explicit
drift and noise_hat a stochastic increment.  All arrays carry a leading
replicate axis so that Monte Carlo ensembles advance together.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .trajectory import ClampEvent, Trajectory


class NumericalAbort(RuntimeError):
    """Raised when a step produces non-finite values; carries the last good state."""

    def __init__(self, message: str, partial: "Ensemble | None" = None):
        super().__init__(message)
        self.partial = partial


def phi1(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.expm1(z[nz]) / z[nz]
    return out


def etd_factors(L: np.ndarray, dt: float):
    return np.exp(L * dt), dt * phi1(L * dt)


@dataclass
class StepReport:
    max_abs: float
    clamp_count: int
    explicit_norms: dict
    cfl: float


@dataclass(eq=False)
class Ensemble:
    times: np.ndarray
    values: np.ndarray  # (n_snapshots, M, N)
    events: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    aborted: bool = False
    max_cfl: float = 0.0

    @property
    def size(self) -> int:
        return self.values.shape[1]

    def trajectory(self, r: int = 0) -> Trajectory:
        ev = [e for e in self.events if e.replicate == r]
        return Trajectory(self.times.copy(), self.values[:, r, :].copy(), ev, dict(self.params), self.aborted)


def snapshot_steps(n_steps: int, stride: int) -> list[int]:
    steps = list(range(0, n_steps + 1, stride))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return steps


def run(u0: np.ndarray, n_steps: int, dt: float, stride: int, advance, params: dict) -> Ensemble:
    """Drive `advance(u, step) -> (u_new, events, cfl)` and collect snapshots."""
    u = np.array(u0, dtype=float)
    keep = set(snapshot_steps(n_steps, stride))
    times, snaps, events = [0.0], [u.copy()], []
    max_cfl = 0.0
    for step in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            new, ev, cfl = advance(u, step)
        if not np.all(np.isfinite(new)):
            part = Ensemble(np.array(times), np.array(snaps), events, params, True, max_cfl)
            raise NumericalAbort(f"non-finite state after step {step + 1} (t={(step + 1) * dt:.6g})", part)
        u = new
        events.extend(ev)
        max_cfl = max(max_cfl, cfl)
        if step + 1 in keep:
            times.append((step + 1) * dt)
            snaps.append(u.copy())
    return Ensemble(np.array(times), np.array(snaps), events, params, False, max_cfl)


def clamp(u: np.ndarray, bound: float, margin: float, t: float):
    """Clip into [-bound+margin, bound-margin] without changing the mean of each row.

    The mass removed by clipping is spread evenly over the points that are
    still inside, repeating until nothing sits outside the limits.  Every
    clipped point is logged.
    """
    lim = bound - margin
    over = np.abs(u) > lim
    if not over.any():
        return u, []
    events = [ClampEvent(t, int(j), float(abs(u[r, j]) - lim), int(r)) for r, j in zip(*np.nonzero(over))]
    target = u.mean(axis=-1)
    out = np.clip(u, -lim, lim)
    for _ in range(50):
        deficit = target - out.mean(axis=-1)
        if np.all(np.abs(deficit) <= 1e-15 * max(1.0, lim)):
            break
        room = np.where(deficit[:, None] > 0, out < lim, out > -lim)
        free = room.sum(axis=-1)
        shift = np.where(free > 0, deficit * u.shape[-1] / np.maximum(free, 1), 0.0)
        out = np.clip(out + room * shift[:, None], -lim, lim)
    return out, events
