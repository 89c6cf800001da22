"""Acceptance criteria, one PASS/FAIL line each in the terminal summary.

Each test records its verdict before asserting, so a failing criterion is
still reported with the measured numbers.
"""
import numpy as np
import pytest

from kaclab.ch import CHParams
from kaclab.entropy import EntropyParams, psi
from kaclab.experiments import (KINDS, ExperimentConfig, run, run_converge_two_step, run_gamma_converge,
                                run_noise_checks, run_remainder_scaling, run_simulate)
from kaclab.grid import (Field, antiderivative_mean_zero, derivative, grid_points, hat, sobolev_weights,
                         spectral_derivative)
from kaclab.ikk import IKKParams
from kaclab.skeleton import recover_control_ch, recover_control_ikk, solve_skeleton_ch, solve_skeleton_ikk
from kaclab.trajectory import FeedbackControl, FunctionControl

pytestmark = pytest.mark.slow


def decreasing(v):
    return all(b < a for a, b in zip(v, v[1:]))


def fmt(v):
    return "[" + ", ".join(f"{x:.4g}" for x in v) + "]"


@pytest.fixture(scope="module")
def noise_table():
    return run_noise_checks(ExperimentConfig.default("noise_checks"))


@pytest.fixture(scope="module")
def gamma_table():
    return run_gamma_converge(ExperimentConfig.default("gamma_converge"))


def test_01_spectral_core(verdict):
    n = 64
    x = grid_points(n)
    f = Field(np.sin(2 * np.pi * x))
    d_err = np.max(np.abs(derivative(f, 1).values - 2 * np.pi * np.cos(2 * np.pi * x)))
    rng = np.random.default_rng(1)
    v = rng.standard_normal(n)
    parseval_err = abs(np.sum(sobolev_weights(n, 0.0) * np.abs(hat(v)) ** 2) - np.mean(v**2))
    smooth = np.exp(np.sin(2 * np.pi * x)) + 0.3 * np.cos(6 * np.pi * x)
    w = Field(smooth - smooth.mean())
    anti_err = np.max(np.abs(derivative(antiderivative_mean_zero(w), 1).values - w.values))
    ok = d_err < 1e-10 and parseval_err < 1e-10 and anti_err < 1e-10
    verdict(1, "spectral core", ok, f"derivative {d_err:.2e}, parseval {parseval_err:.2e}, antiderivative {anti_err:.2e}")
    assert ok


def test_02_entropy_identities(verdict):
    worst_id, lower_ok, negative_ok = 0.0, True, True
    for gamma in (1.0, 0.1, 0.01):
        p = EntropyParams(gamma)
        b = gamma ** (-1 / 3)
        worst_id = max(worst_id, abs(psi(0.0, p) + b),
                       abs(psi(b, p) - b * (np.log(2) - 1)), abs(psi(-b, p) - b * (np.log(2) - 1)))
        z = np.linspace(-b, b, 10_000)
        vals = psi(z, p)
        lower_ok &= bool(np.all(vals >= 0.5 * gamma ** (1 / 3) * z**2 - b - 1e-12))
        negative_ok &= bool(np.all(vals < 0))
    ok = worst_id < 1e-12 and lower_ok and negative_ok
    verdict(2, "entropy identities", ok,
            f"identity error {worst_id:.2e}, lower bound {lower_ok}, strictly negative {negative_ok}")
    assert ok


def test_03_noise_coefficients(verdict, noise_table):
    rows = noise_table.lookup
    f2 = max(float(r[4]) for r in rows("coefficients", "F2_sup"))
    spread = max(float(r[4]) for m in ("F1_spread", "F3_spread") for r in rows("coefficients", m))
    r1 = noise_table.estimate("coefficients", "F1_scaled_ratio")
    r3 = noise_table.estimate("coefficients", "F3_scaled_ratio")
    ok = f2 < 1e-10 and spread < 1e-10 and r1 < 3 and r3 < 3
    verdict(3, "noise coefficients", ok,
            f"F2 sup {f2:.2e}, F1/F3 spread {spread:.2e}, scaled ratios {r1:.4f} / {r3:.4f}")
    assert ok


def test_04_parseval_sum(verdict, noise_table):
    diff = noise_table.estimate("parseval", "abs_difference", 64)
    rel = noise_table.estimate("parseval", "relative_error", 32)
    ok = diff < 1e-8 and rel < 0.10
    verdict(4, "Parseval mode sum", ok, f"closed form vs quadrature {diff:.2e} (K=64), Monte Carlo rel. error {rel:.4f} (K=32, M=200)")
    assert ok


def test_05_conservation_and_admissibility(verdict, tmp_path):
    drift, clamps = {}, {}
    for model in ("ikk", "ch"):
        cfg = ExperimentConfig.default("simulate", model=model, M=1, out=str(tmp_path / model))
        t = run_simulate(cfg)
        drift[model] = t.estimate("summary", "relative_mass_drift")
        clamps[model] = int(t.estimate("summary", "clamp_events"))
    mass_ok = max(drift.values()) < 1e-8
    clamp_ok = clamps["ikk"] == 0
    verdict(5, "conservation and admissibility", mass_ok and clamp_ok,
            f"mass drift ikk {drift['ikk']:.2e}, ch {drift['ch']:.2e}; clamp events in default IKK run {clamps['ikk']}")
    assert mass_ok, drift
    assert clamp_ok, f"{clamps['ikk']} clamp events"


def test_06_remainder_scaling(verdict):
    t = run_remainder_scaling(ExperimentConfig.default("remainder_scaling"))

    def slope(metric):
        rows = [r for r in t.lookup("slope", metric) if r[7] == "noisy"]
        return float(rows[0][4])

    r1, r3, r4 = slope("R1_gamma_slope"), slope("R3_gamma_slope"), slope("R4_delta_slope")
    ok1, ok3, ok4 = 0.5 <= r1 <= 0.85, 0.2 <= r3 <= 0.5, -0.5 <= r4 <= -0.2
    verdict(6, "remainder scaling", ok1 and ok3 and ok4,
            f"R1 gamma-slope {r1:.3f} [0.5, 0.85], R3 gamma-slope {r3:.3f} [0.2, 0.5], R4 delta-slope {r4:.3f} [-0.5, -0.2]")
    assert ok4
    assert ok1
    assert ok3


def test_07_two_step_convergence(verdict):
    cfg = ExperimentConfig.default("converge_two_step")
    t = run_converge_two_step(cfg)
    g = [t.estimate("gamma_sweep", "l2l2_ikk_vs_ch_delta", x) for x in cfg.gammas]
    d = [t.estimate("delta_sweep", "l2l2_ch_delta_vs_ch", x) for x in cfg.deltas]
    ok = cfg.M == 50 and decreasing(g) and decreasing(d)
    verdict(7, "two-step convergence", ok, f"gamma sweep {fmt(g)}, delta sweep {fmt(d)}, M={cfg.M}")
    assert ok


def test_08_rate_round_trip(verdict):
    n, T = 64, 0.05
    x = grid_points(n)
    u0 = Field(0.5 * np.cos(2 * np.pi * x))
    p = CHParams(noise_mode="off", N=n, T=T, dt=1e-5, stride=4)
    fn = lambda t, y: 2 * np.sin(np.pi * t / T) * np.cos(2 * np.pi * y) + np.sin(6 * np.pi * y)
    _, rate = recover_control_ch(solve_skeleton_ch(u0, FunctionControl(fn, n), p), p)
    ts = np.linspace(0, T, 4001)
    ref = 0.5 * np.trapezoid([np.mean(fn(s, x) ** 2) for s in ts], ts)
    err_ch = abs(rate.value - ref) / ref

    gamma = 0.25
    q = IKKParams(gamma=gamma, N=n, T=T, dt=1e-5, stride=4, epsilon=0.0)

    def feedback(t, u):
        phi = np.broadcast_to(0.5 * np.sin(np.pi * t / T) * np.sin(2 * np.pi * x), np.shape(u))
        return np.sqrt(1 - gamma ** (2 / 3) * u**2) * spectral_derivative(phi, 1)

    tr = solve_skeleton_ikk(u0, FeedbackControl(feedback), q)
    _, rate_i = recover_control_ikk(tr, q)
    gs = np.array([feedback(s, u) for s, u in zip(tr.times, tr.values)])
    ref_i = 0.5 * np.trapezoid(np.mean(gs**2, axis=1), tr.times)
    err_ikk = abs(rate_i.value - ref_i) / ref_i
    ok = err_ch < 0.02 and err_ikk < 0.02
    verdict(8, "rate round trip", ok, f"relative error CH {err_ch:.2e}, IKK weighted {err_ikk:.2e}")
    assert ok


def test_09_stability(verdict, gamma_table):
    rows = gamma_table.lookup("stability", "l2l2_oscillating_vs_base")
    dist = {int(r[2]): float(r[4]) for r in rows}
    ratio = dist[16] / dist[1]
    ok = ratio < 0.5
    verdict(9, "weak-strong stability", ok, f"distances {fmt([dist[m] for m in sorted(dist)])}, m16/m1 = {ratio:.3f}")
    assert ok


def test_10_gamma_convergence(verdict, gamma_table):
    cfg = ExperimentConfig.default("gamma_converge")
    gaps = [gamma_table.estimate("gamma", "relative_gap", g) for g in cfg.gammas]
    ok = decreasing(gaps) and gaps[-1] < 0.15
    verdict(10, "gamma convergence of rates", ok, f"relative gaps {fmt(gaps)} over gamma {list(cfg.gammas)}")
    assert ok


REDUCED = {
    "converge_two_step": dict(M=3, batch=2, T=0.05),
    "entropy_report": dict(M=2, batch=1, T=0.05),
    "remainder_scaling": dict(M=2, batch=1, T=0.05),
    "ldp_regime": dict(M=2, batch=1, T=0.05),
    "gamma_converge": dict(T=0.05, dt=1e-4),
    "noise_checks": dict(M=20, batch=5),
    "simulate": dict(M=2, batch=1, T=0.05),
}


def test_11_determinism(verdict, tmp_path):
    same = {}
    for kind in KINDS:
        cfg = ExperimentConfig.default(kind, **REDUCED[kind])
        _, a = run(cfg.replace(out=str(tmp_path / kind / "a")))
        _, b = run(cfg.replace(out=str(tmp_path / kind / "b")))
        same[kind] = a.read_bytes() == b.read_bytes()
    ok = all(same.values())
    verdict(11, "determinism", ok, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in same.items()))
    assert ok
