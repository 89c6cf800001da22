"""Experiment configuration, Monte Carlo orchestration and CSV reports.

Every runner splits its work into cells, one per (parameter point,
replicate chunk).  Chunks have a fixed size taken from the config, so
the numbers do not depend on how many workers execute them, and results
are aggregated after sorting by the coordinates each cell carries.

Tables use one long layout for all experiments:
section, parameter, value, metric, estimate, stderr, count, flag.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, ch, ikk, noise
from . import skeleton as sk
from .entropy import DiffusionCoefficient, sigma_prime_sup
from .grid import Field, spectral_derivative
from .kernel import DEFAULT_RADIUS, required_points
from .stepping import NumericalAbort
from .trajectory import FunctionControl, write_trajectory

log = logging.getLogger(__name__)

KINDS = ("converge_two_step", "entropy_report", "remainder_scaling", "ldp_regime",
         "gamma_converge", "noise_checks", "simulate")
COLUMNS = ("section", "parameter", "value", "metric", "estimate", "stderr", "count", "flag")
TREND_NOTE = ("limits in probability or in distribution are reported as Monte Carlo mean distances "
              "with standard errors; decreasing means are trend evidence, not a certificate")


class ConfigError(ValueError):
    pass


def ldp_schedule(levels: int = 3) -> dict:
    """eps_i = 4^-i, delta_i = eps_i^(3/4), gamma_i = eps_i^(1/2), n_i = i + 2."""
    eps = [4.0 ** -i for i in range(1, levels + 1)]
    return {"epsilons": eps, "deltas": [e ** 0.75 for e in eps], "gammas": [e ** 0.5 for e in eps],
            "ns": [i + 2 for i in range(1, levels + 1)]}


DEFAULTS = {
    "converge_two_step": {"M": 50},
    "entropy_report": {"M": 20, "gamma": 0.25},
    "remainder_scaling": {"M": 8, "stride": 5, "gamma": 0.25, "batch": 8},
    "ldp_regime": dict(ldp_schedule(), M=30, T=0.2, dt=5e-5, stride=4, amplitude=0.4),
    "gamma_converge": {"M": 1, "T": 0.5, "dt": 5e-5, "stride": 2, "amplitude": 0.4},
    "noise_checks": {"M": 200, "deltas": [0.2, 0.1, 0.05], "T": 0.1, "batch": 50},
    "simulate": {"M": 4, "N": 128, "gammas": [0.1], "deltas": [0.1], "batch": 4},
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    model: str = "ikk"
    gammas: tuple = (0.5, 0.25, 0.125)
    deltas: tuple = (0.2, 0.1, 0.05)
    epsilons: tuple = (1.0,)
    ns: tuple = (2,)
    modes: tuple = (1, 4, 16)
    delta: float = 0.1
    gamma: float = 0.25
    M: int = 50
    batch: int = 10
    seed: int = 0
    N: int = 64
    K: int | None = None
    dt: float = 1e-4
    T: float = 0.5
    stride: int = 10
    a: float = -1.0
    amplitude: float = 0.5
    control: float = 2.0
    noise: str = "mollified"
    sobolev_beta: float = 7.0
    out: str = "results"

    def __post_init__(self):
        for name in ("gammas", "deltas", "epsilons", "ns", "modes"):
            v = getattr(self, name)
            if isinstance(v, list):
                object.__setattr__(self, name, tuple(v))
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.model not in ("ikk", "ch"):
            raise ConfigError("model must be 'ikk' or 'ch'")
        for name in ("gammas", "deltas", "epsilons", "ns", "modes"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name} must not be empty")
        if any(not 0 < g <= 1 for g in self.gammas + (self.gamma,)):
            raise ConfigError("every gamma must lie in (0, 1]")
        if any(d <= 0 for d in self.deltas + (self.delta,)):
            raise ConfigError("every delta must be positive")
        if any(e < 0 for e in self.epsilons):
            raise ConfigError("epsilons must be nonnegative")
        if self.M < 1 or self.batch < 1 or self.stride < 1:
            raise ConfigError("M, batch and stride must be positive")
        if not (self.dt > 0 and self.T > 0 and self.dt <= self.T):
            raise ConfigError("need 0 < dt <= T")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.noise not in ch.NOISE_MODES:
            raise ConfigError(f"noise must be one of {ch.NOISE_MODES}")
        if self.kind == "ldp_regime":
            sizes = {len(self.epsilons), len(self.deltas), len(self.gammas), len(self.ns)}
            if len(sizes) != 1:
                raise ConfigError("the ldp schedule lists (epsilons, deltas, gammas, ns) must have equal length")
        for g in self.gammas + (self.gamma,):
            need = required_points(DEFAULT_RADIUS, g)
            if self.N < need:
                raise ConfigError(f"N={self.N} cannot resolve the rescaled kernel at gamma={g}; need N >= {need}")

    # ---------------------------------------------------------------- json
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "kind" not in raw:
            raise ConfigError("config needs a 'kind'")
        merged = dict(DEFAULTS.get(raw["kind"], {}))
        merged.update(raw)
        try:
            return cls(**merged)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.parse(text)

    @classmethod
    def default(cls, kind: str, **overrides) -> "ExperimentConfig":
        return cls.from_dict({"kind": kind, **overrides})

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def digest(self) -> str:
        """Hash of everything that can change the numbers (out and worker count excluded)."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()[:16]

    def initial(self) -> Field:
        return Field.from_function(lambda x: self.amplitude * np.cos(2 * np.pi * x), self.N)

    def control_fn(self):
        A, T = self.control, self.T
        return lambda t, x: A * np.sin(np.pi * t / T) * np.cos(2 * np.pi * x)


# -------------------------------------------------------------------- tables

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not np.isfinite(v):
            raise ValueError("report rows must be finite")
        return repr(v)
    return str(v)


@dataclass
class ReportTable:
    columns: tuple
    rows: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def add(self, section, parameter="", value=None, metric="", estimate=None, stderr=None, count=None, flag=""):
        if estimate is not None and not np.isfinite(estimate):
            flag = (flag + ";" if flag else "") + "nonfinite"
            estimate = None
        self.rows.append((section, parameter, value, metric, estimate, stderr, count, flag))

    def lookup(self, section: str, metric: str, value=None):
        """Rows matching section and metric (and parameter value if given)."""
        out = [r for r in self.rows if r[0] == section and r[3] == metric
               and (value is None or (r[2] is not None and np.isclose(float(r[2]), value)))]
        return out

    def estimate(self, section: str, metric: str, value=None) -> float:
        rows = self.lookup(section, metric, value)
        if len(rows) != 1:
            raise KeyError(f"expected one row for {section}/{metric}/{value}, found {len(rows)}")
        return float(rows[0][4])

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k in sorted(self.provenance):
            buf.write(f"# {k}: {self.provenance[k]}\n")
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_csv().encode("utf-8"))
        return path

    @classmethod
    def read_csv(cls, path) -> "ReportTable":
        prov, body = {}, []
        for line in Path(path).read_text(encoding="utf-8").splitlines(keepends=True):
            if line.startswith("# "):
                k, _, v = line[2:].rstrip("\r\n").partition(": ")
                prov[k] = v
            else:
                body.append(line)
        rows = list(csv.reader(io.StringIO("".join(body))))
        return cls(tuple(rows[0]), [tuple(r) for r in rows[1:]], prov)


def new_table(cfg: ExperimentConfig) -> ReportTable:
    return ReportTable(COLUMNS, [], {"config_hash": cfg.digest(), "code_version": __version__,
                                     "seed": cfg.seed, "kind": cfg.kind, "note": TREND_NOTE})


# -------------------------------------------------------------------- helpers

def fit_slope(x, y) -> float:
    """Least-squares slope of log y against log x; needs at least three points."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 3:
        raise ValueError("a slope fit needs at least three points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive data")
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def l2l2_rows(a: np.ndarray, b: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Per-replicate L2([0,T]; L2) distance for ensembles of shape (n_snap, M, N)."""
    return np.sqrt(np.trapezoid(np.mean((a - b) ** 2, axis=-1), times, axis=0))


def _streams(cfg: ExperimentConfig, lo: int, hi: int):
    return [noise.NoiseStream(cfg.seed, r) for r in range(lo, hi)]


def _chunks(M: int, batch: int):
    return [(lo, min(M, lo + batch)) for lo in range(0, M, batch)]


def _mean_se(v):
    v = np.asarray(v, float)
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


def _ikk(cfg: ExperimentConfig, gamma: float, delta: float, **kw) -> ikk.IKKParams:
    base = dict(gamma=gamma, delta=delta, a=cfg.a, epsilon=cfg.epsilons[0], dt=cfg.dt, T=cfg.T,
                N=cfg.N, K=cfg.K, stride=cfg.stride)
    base.update(kw)
    return ikk.IKKParams(**base)


def _ch(cfg: ExperimentConfig, **kw) -> ch.CHParams:
    base = dict(a=cfg.a, dt=cfg.dt, T=cfg.T, N=cfg.N, K=cfg.K, stride=cfg.stride,
                noise_mode=cfg.noise, delta=cfg.delta)
    base.update(kw)
    return ch.CHParams(**base)


def _execute(cells: list, workers: int) -> list:
    """Run (function, args) cells, serially or on a process pool; results keep cell order."""
    if workers <= 1 or len(cells) <= 1:
        return [fn(*args) for fn, args in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *args) for fn, args in cells]
        return [f.result() for f in futures]


# -------------------------------------------------------------------- two-step convergence

def _converge_cell(cfg: ExperimentConfig, lo: int, hi: int) -> dict:
    st = _streams(cfg, lo, hi)
    u0 = cfg.initial()
    out = {"lo": lo, "gamma": {}, "delta": {}, "aborted": []}
    white = ch.simulate_ch_ensemble(_ch(cfg, noise_mode="white"), u0, st)
    moll = {}
    for d in sorted(set(cfg.deltas) | {cfg.delta}):
        moll[d] = ch.simulate_ch_ensemble(_ch(cfg, noise_mode="mollified", delta=d), u0, st)
    for d in cfg.deltas:
        out["delta"][d] = l2l2_rows(moll[d].values, white.values, white.times).tolist()
    for g in cfg.gammas:
        try:
            e = ikk.simulate_ensemble(_ikk(cfg, g, cfg.delta), u0, st)
        except NumericalAbort as exc:
            out["aborted"].append(("gamma", g, str(exc)))
            continue
        out["gamma"][g] = l2l2_rows(e.values, moll[cfg.delta].values, e.times).tolist()
    return out


def run_converge_two_step(cfg: ExperimentConfig, workers: int = 1) -> ReportTable:
    cells = [(_converge_cell, (cfg, lo, hi)) for lo, hi in _chunks(cfg.M, cfg.batch)]
    parts = sorted(_execute(cells, workers), key=lambda r: r["lo"])
    t = new_table(cfg)
    aborted = {(s, v) for p in parts for s, v, _ in p["aborted"]}
    for g in cfg.gammas:
        vals = [x for p in parts for x in p["gamma"].get(g, [])]
        flag = "aborted" if ("gamma", g) in aborted else ""
        if vals:
            m, se = _mean_se(vals)
            t.add("gamma_sweep", "gamma", g, "l2l2_ikk_vs_ch_delta", m, se, len(vals), flag)
        else:
            t.add("gamma_sweep", "gamma", g, "l2l2_ikk_vs_ch_delta", None, None, 0, flag or "empty")
    for d in cfg.deltas:
        m, se = _mean_se([x for p in parts for x in p["delta"][d]])
        t.add("delta_sweep", "delta", d, "l2l2_ch_delta_vs_ch", m, se, cfg.M)
    return t


# -------------------------------------------------------------------- entropy report

def _entropy_cell(cfg: ExperimentConfig, gamma: float, delta: float, lo: int, hi: int) -> dict:
    p = _ikk(cfg, gamma, delta)
    try:
        e = ikk.simulate_ensemble(p, cfg.initial(), _streams(cfg, lo, hi))
    except NumericalAbort as exc:
        return {"key": (gamma, delta, lo), "aborted": str(exc)}
    u = e.values  # (n_snap, M, N)
    ux = spectral_derivative(u, 1)
    w = np.maximum(1.0 - gamma ** (2 / 3) * u**2, 1e-300)
    half_sq = 0.5 * np.mean(u**2, axis=-1)  # (n_snap, M)
    weighted = np.trapezoid(np.mean(u**2 * ux**2 / w, axis=-1), e.times, axis=0)
    grad = -cfg.a * np.trapezoid(np.mean(ux**2, axis=-1), e.times, axis=0)
    return {"key": (gamma, delta, lo), "half_sq": half_sq.T.tolist(), "weighted": weighted.tolist(),
            "grad": grad.tolist(), "clamps": len(e.events)}


def run_entropy_report(cfg: ExperimentConfig, workers: int = 1) -> ReportTable:
    if cfg.a >= 0:
        raise ConfigError("the entropy report needs a < 0")
    points = [(g, cfg.delta) for g in cfg.gammas] + [(cfg.gamma, d) for d in cfg.deltas]
    points = sorted(set(points))
    cells = [(_entropy_cell, (cfg, g, d, lo, hi)) for g, d in points for lo, hi in _chunks(cfg.M, cfg.batch)]
    parts = sorted(_execute(cells, workers), key=lambda r: r["key"])
    t = new_table(cfg)
    totals = {}
    for g, d in points:
        mine = [p for p in parts if p["key"][:2] == (g, d)]
        ok = [p for p in mine if "aborted" not in p]
        flag = "aborted" if len(ok) < len(mine) else ""
        if not ok:
            t.add("point", f"gamma={g!r};delta={d!r}", None, "total", None, None, 0, "aborted")
            continue
        hs = np.array([x for p in ok for x in p["half_sq"]])  # (M, n_snap)
        sup = float(hs.mean(axis=0).max())
        wm, wse = _mean_se([x for p in ok for x in p["weighted"]])
        gm, gse = _mean_se([x for p in ok for x in p["grad"]])
        total = sup + wm + gm
        totals[(g, d)] = total
        label = f"gamma={g!r};delta={d!r}"
        n = hs.shape[0]
        t.add("point", label, None, "sup_mean_half_l2sq", sup, None, n, flag)
        t.add("point", label, None, "weighted_gradient", wm, wse, n, flag)
        t.add("point", label, None, "gradient_l2l2", gm, gse, n, flag)
        t.add("point", label, None, "total", total, None, n, flag)
        t.add("point", label, None, "fitted_constant", total / (1 + cfg.T / d), None, n, flag)
        t.add("point", label, None, "clamp_events", float(sum(p["clamps"] for p in ok)), None, n, flag)
    g_tot = [totals[(g, cfg.delta)] for g in cfg.gammas if (g, cfg.delta) in totals]
    if len(g_tot) >= 2:
        t.add("summary", "delta", cfg.delta, "gamma_max_over_min", max(g_tot) / min(g_tot), None, len(g_tot))
    d_pts = [(d, totals[(cfg.gamma, d)]) for d in cfg.deltas if (cfg.gamma, d) in totals]
    try:
        t.add("summary", "gamma", cfg.gamma, "delta_slope",
              fit_slope([d for d, _ in d_pts], [v for _, v in d_pts]), None, len(d_pts))
    except ValueError as exc:
        log.warning("delta slope not reported: %s", exc)
    return t


# -------------------------------------------------------------------- remainders

def remainder_norms(e, p: ikk.IKKParams, beta: float) -> np.ndarray:
    """||int_0^T R_j ds||_{H^-beta} per replicate, shape (M, 4)."""
    R = np.array([ikk.remainder_fields(e.values[i], p) for i in range(len(e.times))])  # (n_snap, 4, M, N)
    I = np.trapezoid(R, e.times, axis=0)  # (4, M, N)
    return ikk.negative_sobolev_norm(I, beta).T


def _remainder_cell(cfg: ExperimentConfig, gamma: float, delta: float, eps: float, lo: int, hi: int) -> dict:
    p = _ikk(cfg, gamma, delta, epsilon=eps)
    st = _streams(cfg, lo, hi) if eps > 0 else None
    try:
        e = ikk.simulate_ensemble(p, cfg.initial(), st)
    except NumericalAbort as exc:
        return {"key": (eps, gamma, delta, lo), "aborted": str(exc)}
    return {"key": (eps, gamma, delta, lo), "norms": remainder_norms(e, p, cfg.sobolev_beta).tolist()}


def run_remainder_scaling(cfg: ExperimentConfig, workers: int = 1) -> ReportTable:
    eps = cfg.epsilons[0]
    stoch = sorted({(g, cfg.delta) for g in cfg.gammas} | {(cfg.gamma, d) for d in cfg.deltas})
    cells = [(_remainder_cell, (cfg, g, d, eps, lo, hi)) for g, d in stoch for lo, hi in _chunks(cfg.M, cfg.batch)]
    cells += [(_remainder_cell, (cfg, g, cfg.delta, 0.0, 0, 1)) for g in cfg.gammas]
    parts = sorted(_execute(cells, workers), key=lambda r: r["key"])
    t = new_table(cfg)
    means = {}
    for key in sorted({p["key"][:3] for p in parts}):
        e_, g, d = key
        ok = [p for p in parts if p["key"][:3] == key and "aborted" not in p]
        section = "noisy" if e_ > 0 else "deterministic"
        if not ok:
            t.add(section, f"gamma={g!r};delta={d!r}", None, "R1", None, None, 0, "aborted")
            continue
        arr = np.array([x for p in ok for x in p["norms"]])
        for j in range(4):
            m, se = _mean_se(arr[:, j])
            means[(section, g, d, j)] = m
            t.add(section, f"gamma={g!r};delta={d!r}", None, f"R{j + 1}", m, se, arr.shape[0])

    def slope_row(section, param, value, metric, xs, key):
        ys = [means.get(key(x)) for x in xs]
        if any(y is None for y in ys):
            log.warning("%s %s slope skipped: missing points", section, metric)
            return
        try:
            t.add("slope", param, value, metric, fit_slope(xs, ys), None, len(xs), section)
        except ValueError as exc:
            log.warning("%s %s slope rejected: %s", section, metric, exc)

    for section in ("noisy", "deterministic"):
        for j in range(4):
            slope_row(section, "delta", cfg.delta, f"R{j + 1}_gamma_slope", list(cfg.gammas),
                      lambda g, j=j, s=section: (s, g, cfg.delta, j))
    slope_row("noisy", "gamma", cfg.gamma, "R4_delta_slope", list(cfg.deltas),
              lambda d: ("noisy", cfg.gamma, d, 3))
    return t


# -------------------------------------------------------------------- small-noise regime

def regime_quantity(eps: float, delta: float, gamma: float, n: int) -> float:
    """eps (delta^{-2/3} + gamma^{4/3} delta^{-1/3} sup|sigma_n'|^2)."""
    s = sigma_prime_sup(DiffusionCoefficient("family", n))
    return eps * (delta ** (-2 / 3) + gamma ** (4 / 3) * delta ** (-1 / 3) * s**2)


def _ldp_params(cfg: ExperimentConfig, i: int) -> ikk.IKKParams:
    return _ikk(cfg, cfg.gammas[i], cfg.deltas[i], epsilon=cfg.epsilons[i],
                coefficient=DiffusionCoefficient("family", int(cfg.ns[i])))


def controlled_run(cfg: ExperimentConfig, i: int, lo: int = 0, hi: int = 1):
    """Controlled small-noise equation at schedule level i for replicates lo..hi-1."""
    p = _ldp_params(cfg, i)
    g = FunctionControl(cfg.control_fn(), cfg.N)
    st = _streams(cfg, lo, hi) if p.epsilon > 0 else None
    return ikk.simulate_ensemble(p, cfg.initial(), st, control=g, M=hi - lo)


def _ldp_cell(cfg: ExperimentConfig, i: int, lo: int, hi: int) -> dict:
    g = FunctionControl(cfg.control_fn(), cfg.N)
    ref = sk.solve_skeleton_ch(cfg.initial(), g, _ch(cfg, noise_mode="off"))
    try:
        e = controlled_run(cfg, i, lo, hi)
    except NumericalAbort as exc:
        return {"key": (i, lo), "aborted": str(exc)}
    d = l2l2_rows(e.values, ref.values[:, None, :], e.times)
    return {"key": (i, lo), "dist": d.tolist(), "clamps": len(e.events)}


def run_ldp_regime(cfg: ExperimentConfig, workers: int = 1) -> ReportTable:
    levels = range(len(cfg.epsilons))
    cells = [(_ldp_cell, (cfg, i, lo, hi)) for i in levels for lo, hi in _chunks(cfg.M, cfg.batch)]
    parts = sorted(_execute(cells, workers), key=lambda r: r["key"])
    t = new_table(cfg)
    prev = None
    for i in levels:
        q = regime_quantity(cfg.epsilons[i], cfg.deltas[i], cfg.gammas[i], int(cfg.ns[i]))
        flag = "regime_not_decreasing" if prev is not None and q >= prev else ""
        if flag:
            log.warning("schedule level %d: regime quantity %.4g does not decrease", i, q)
        prev = q
        label = (f"eps={cfg.epsilons[i]!r};delta={cfg.deltas[i]!r};"
                 f"gamma={cfg.gammas[i]!r};n={int(cfg.ns[i])}")
        t.add("schedule", label, i, "regime_quantity", q, None, None, flag)
        ok = [p for p in parts if p["key"][0] == i and "aborted" not in p]
        aflag = "aborted" if len(ok) < len(_chunks(cfg.M, cfg.batch)) else ""
        vals = [x for p in ok for x in p["dist"]]
        if vals:
            m, se = _mean_se(vals)
            t.add("schedule", label, i, "l2l2_controlled_vs_skeleton", m, se, len(vals), aflag)
            t.add("schedule", label, i, "clamp_events", float(sum(p["clamps"] for p in ok)), None, len(vals), aflag)
    return t


# -------------------------------------------------------------------- skeleton experiments

def _gamma_cell(cfg: ExperimentConfig) -> dict:
    u0 = cfg.initial()
    g = FunctionControl(cfg.control_fn(), cfg.N)
    p_ch = _ch(cfg, noise_mode="off")
    p_ikk = _ikk(cfg, cfg.gammas[0], cfg.delta, epsilon=0.0)
    rows = sk.gamma_convergence_experiment(u0, g, list(cfg.gammas), p_ikk, p_ch,
                                           initial=lambda gm: sk.mollified_initial_data(u0, gm))
    return {"rows": [dataclasses.astuple(r) for r in rows]}


def _stability_cell(cfg: ExperimentConfig) -> dict:
    g = FunctionControl(cfg.control_fn(), cfg.N)
    h = Field.from_function(lambda x: np.sin(2 * np.pi * x), cfg.N)
    rep = sk.stability_experiment(g, h, list(cfg.modes), cfg.initial(), _ch(cfg, noise_mode="off"))
    return {"distances": rep.distances}


def run_gamma_converge(cfg: ExperimentConfig, workers: int = 1) -> ReportTable:
    gam, stab = _execute([(_gamma_cell, (cfg,)), (_stability_cell, (cfg,))], workers)
    t = new_table(cfg)
    for gamma, dist, r_ikk, r_ch, gap, ratio in gam["rows"]:
        t.add("gamma", "gamma", gamma, "l2l2_ikk_vs_ch", dist)
        t.add("gamma", "gamma", gamma, "rate_ikk", r_ikk)
        t.add("gamma", "gamma", gamma, "rate_ch", r_ch)
        t.add("gamma", "gamma", gamma, "relative_gap", gap)
        t.add("gamma", "gamma", gamma, "initial_entropy_ratio", ratio)
    for m, d in zip(cfg.modes, stab["distances"]):
        t.add("stability", "m", m, "l2l2_oscillating_vs_base", d)
    return t


# -------------------------------------------------------------------- noise checks

def _noise_mc_cell(cfg: ExperimentConfig, lo: int, hi: int, K: int) -> dict:
    st = _streams(cfg, lo, hi)
    p = ch.CHParams(N=max(64, 1 << int(np.ceil(np.log2(3 * K + 3)))))
    dt = cfg.T / 4
    k = np.arange(1, K + 1)
    decay = np.exp(-ch.ou_rate(k, p, "integer") * dt)
    std = ch.ou_step_std(k, p, dt, 1.0, "integer")
    src = noise.GaussianSource(st, 2 * K + 1)
    zh = np.zeros((len(st), K), dtype=complex)
    for j in range(4):
        zh = decay * zh - 1j * std * ch._complex_gaussians(src.draw(j), p.N)[:, 1:K + 1]
    return {"lo": lo, "sq": (2 * np.sum(np.abs(zh) ** 2, axis=1) / 4).tolist()}


def run_noise_checks(cfg: ExperimentConfig, workers: int = 1) -> ReportTable:
    t = new_table(cfg)
    f1s, f3s = [], []
    for d in cfg.deltas:
        c = noise.coefficients(noise.MollifierSpec(d, cfg.N))
        label = f"delta={d!r}"
        t.add("coefficients", label, d, "F2_sup", c.F2.sup_norm())
        t.add("coefficients", label, d, "F1_spread", c.F1_spread)
        t.add("coefficients", label, d, "F3_spread", c.F3_spread)
        t.add("coefficients", label, d, "F1_scaled", c.F1 * d ** (1 / 3))
        t.add("coefficients", label, d, "F3_scaled", c.F3 * d)
        f1s.append(c.F1 * d ** (1 / 3))
        f3s.append(c.F3 * d)
    t.add("coefficients", "", None, "F1_scaled_ratio", max(f1s) / min(f1s), None, len(f1s))
    t.add("coefficients", "", None, "F3_scaled_ratio", max(f3s) / min(f3s), None, len(f3s))
    closed, quad = ch.parseval_gradient_integral(cfg.T, 64)
    t.add("parseval", "K", 64, "closed_form", closed)
    t.add("parseval", "K", 64, "quadrature", quad)
    t.add("parseval", "K", 64, "abs_difference", abs(closed - quad))
    K = 32
    cells = [(_noise_mc_cell, (cfg, lo, hi, K)) for lo, hi in _chunks(cfg.M, cfg.batch)]
    parts = sorted(_execute(cells, workers), key=lambda r: r["lo"])
    m, se = _mean_se([x for p in parts for x in p["sq"]])
    ref = ch.parseval_closed_form(cfg.T, K)
    t.add("parseval", "K", K, "monte_carlo", m, se, cfg.M)
    t.add("parseval", "K", K, "closed_form", ref)
    t.add("parseval", "K", K, "relative_error", abs(m - ref) / ref, None, cfg.M)
    return t


# -------------------------------------------------------------------- plain simulation

def _simulate_cell(cfg: ExperimentConfig, lo: int, hi: int) -> dict:
    st = _streams(cfg, lo, hi) if cfg.epsilons[0] > 0 else None
    out = Path(cfg.out)
    if cfg.model == "ikk":
        p = _ikk(cfg, cfg.gammas[0], cfg.deltas[0])
        sim = lambda: ikk.simulate_ensemble(p, cfg.initial(), st, M=hi - lo)
    else:
        p = _ch(cfg, delta=cfg.deltas[0], noise_mode=cfg.noise if st else "off")
        sim = lambda: ch.simulate_ch_ensemble(p, cfg.initial(), st, M=hi - lo)
    try:
        e, aborted = sim(), None
    except NumericalAbort as exc:
        e, aborted = exc.partial, str(exc)
    rows = []
    for r in range(e.size):
        tr = e.trajectory(r)
        write_trajectory(out / f"{cfg.model}_rep{lo + r:04d}.traj", tr, seed=cfg.seed, stride=cfg.stride)
        mass = tr.masses()
        rel = float(np.max(np.abs(mass - mass[0])) / (1 + np.mean(np.abs(tr.values[0]))))
        rows.append((lo + r, len(tr.events), rel, float(np.abs(tr.values).max()), len(tr)))
    return {"lo": lo, "rows": rows, "aborted": aborted}


def run_simulate(cfg: ExperimentConfig, workers: int = 1) -> ReportTable:
    """Simulate M replicates, persist each trajectory, and tabulate clamps and mass drift.

    A numerical abort is re-raised after every finished trajectory and the
    partial ones have been written.
    """
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    parts = sorted(_execute([(_simulate_cell, (cfg, lo, hi)) for lo, hi in _chunks(cfg.M, cfg.batch)], workers),
                   key=lambda r: r["lo"])
    t = new_table(cfg)
    for p in parts:
        for rep, clamps, rel, sup, n in p["rows"]:
            flag = "aborted" if p["aborted"] else ""
            t.add("replicate", "replicate", rep, "clamp_events", float(clamps), None, n, flag)
            t.add("replicate", "replicate", rep, "relative_mass_drift", rel, None, n, flag)
            t.add("replicate", "replicate", rep, "max_abs", sup, None, n, flag)
    t.add("summary", "model", cfg.model, "clamp_events",
          float(sum(r[1] for p in parts for r in p["rows"])), None, cfg.M)
    t.add("summary", "model", cfg.model, "relative_mass_drift",
          max(r[2] for p in parts for r in p["rows"]), None, cfg.M)
    aborted = [p["aborted"] for p in parts if p["aborted"]]
    if aborted:
        t.write(Path(cfg.out) / "simulate.csv")
        raise NumericalAbort(aborted[0])
    return t


RUNNERS = {
    "converge_two_step": run_converge_two_step,
    "entropy_report": run_entropy_report,
    "remainder_scaling": run_remainder_scaling,
    "ldp_regime": run_ldp_regime,
    "gamma_converge": run_gamma_converge,
    "noise_checks": run_noise_checks,
    "simulate": run_simulate,
}


def run(cfg: ExperimentConfig, workers: int = 1) -> tuple[ReportTable, Path]:
    """Run the configured experiment and write <out>/<kind>.csv."""
    table = RUNNERS[cfg.kind](cfg, workers)
    return table, table.write(Path(cfg.out) / f"{cfg.kind}.csv")
