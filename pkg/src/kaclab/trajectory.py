"""Time-indexed field sequences, controls, and their on-disk format.

File layout: one JSON header line, then one binary Field record per
snapshot (see grid.write_field).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .grid import Field, GridError, grid_points, read_field, write_field


@dataclass(frozen=True)
class ClampEvent:
    time: float
    index: int
    magnitude: float
    replicate: int = 0


@dataclass(eq=False)
class Trajectory:
    times: np.ndarray
    values: np.ndarray  # shape (n_snapshots, N)
    events: list = field(default_factory=list)
    params: dict = field(default_factory=dict)
    aborted: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.times.size:
            raise GridError("trajectory values must have shape (len(times), N)")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise GridError("trajectory times must be increasing")

    def __len__(self):
        return self.times.size

    @property
    def n_points(self) -> int:
        return self.values.shape[1]

    def snapshot(self, i: int) -> Field:
        return Field(self.values[i])

    def fields(self) -> list[Field]:
        return [Field(v) for v in self.values]

    def masses(self) -> np.ndarray:
        return self.values.mean(axis=1)

    def every(self, stride: int) -> "Trajectory":
        return Trajectory(self.times[::stride], self.values[::stride], list(self.events), dict(self.params))


@dataclass(eq=False)
class ControlField:
    times: np.ndarray
    values: np.ndarray  # shape (n_times, N)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] != self.times.size:
            raise GridError("control values must have shape (len(times), N)")
        if not np.all(np.isfinite(self.values)):
            raise GridError("control contains non-finite values")

    @classmethod
    def from_function(cls, fn: Callable[[float, np.ndarray], np.ndarray], times, n: int) -> "ControlField":
        x = grid_points(n)
        times = np.asarray(times, dtype=float)
        return cls(times, np.array([np.broadcast_to(fn(t, x), x.shape) for t in times]))

    @classmethod
    def zero(cls, T: float, n: int) -> "ControlField":
        return cls(np.array([0.0, T]), np.zeros((2, n)))

    @property
    def n_points(self) -> int:
        return self.values.shape[1]

    def at(self, t: float) -> np.ndarray:
        """Piecewise-linear interpolation in time, constant outside the range."""
        ts = self.times
        if t <= ts[0]:
            return self.values[0]
        if t >= ts[-1]:
            return self.values[-1]
        j = int(np.searchsorted(ts, t, side="right")) - 1
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return (1 - w) * self.values[j] + w * self.values[j + 1]

    def slice(self, t: float, u: np.ndarray | None = None) -> np.ndarray:
        return self.at(t)

    def l2_squared(self) -> float:
        """||g||^2 in L2([0,T]; L2) by trapezoid in time."""
        return float(np.trapezoid(np.mean(self.values**2, axis=1), self.times))

    def rate(self) -> float:
        return 0.5 * self.l2_squared()


class FunctionControl:
    """Control g(t, x) given as a function, evaluated on the grid at any time."""

    def __init__(self, fn: Callable[[float, np.ndarray], np.ndarray], n: int):
        self.fn = fn
        self.x = grid_points(n)

    def slice(self, t: float, u: np.ndarray | None = None) -> np.ndarray:
        return np.broadcast_to(self.fn(t, self.x), self.x.shape)

    def sample(self, times) -> ControlField:
        times = np.asarray(times, dtype=float)
        return ControlField(times, np.array([self.slice(t) for t in times]))


class FeedbackControl:
    """Control g(t, u) that depends on the current state (arrays of shape (..., N))."""

    def __init__(self, fn: Callable[[float, np.ndarray], np.ndarray]):
        self.fn = fn

    def slice(self, t: float, u: np.ndarray | None = None) -> np.ndarray:
        return self.fn(t, u)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return _jsonable({k: getattr(obj, k) for k in obj.__dataclass_fields__})
    return obj


def _write(path, header: dict, rows: np.ndarray):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write((json.dumps(_jsonable(header), sort_keys=True) + "\n").encode("utf-8"))
        for v in rows:
            write_field(fh, Field(v))


def _read(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        rows = [read_field(fh).values for _ in range(header["count"])]
    return header, np.array(rows)


def write_trajectory(path, traj: Trajectory, seed: int | None = None, stride: int | None = None) -> None:
    header = {
        "kind": "trajectory",
        "count": len(traj),
        "times": traj.times.tolist(),
        "params": traj.params,
        "seed": seed,
        "stride": stride,
        "aborted": traj.aborted,
        "events": [[e.time, e.index, e.magnitude, e.replicate] for e in traj.events],
    }
    _write(path, header, traj.values)


def read_trajectory(path) -> Trajectory:
    header, rows = _read(path)
    if header.get("kind") != "trajectory":
        raise GridError(f"{path} is not a trajectory file")
    events = [ClampEvent(t, int(i), m, int(r)) for t, i, m, r in header["events"]]
    return Trajectory(np.array(header["times"]), rows, events, header["params"], header["aborted"])


def write_control(path, g: ControlField) -> None:
    _write(path, {"kind": "control", "count": g.times.size, "times": g.times.tolist()}, g.values)


def read_control(path) -> ControlField:
    header, rows = _read(path)
    if header.get("kind") != "control":
        raise GridError(f"{path} is not a control file")
    return ControlField(np.array(header["times"]), rows)
