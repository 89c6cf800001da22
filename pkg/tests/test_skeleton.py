import logging

import numpy as np
import pytest

from kaclab.ch import CHParams
from kaclab.grid import Field, grid_points, spectral_derivative
from kaclab.ikk import IKKParams
from kaclab.skeleton import (RecoveryError, elliptic_residual, gamma_convergence_experiment, l2l2_distance,
                             mollified_initial_data, project_mean, recover_control_ch, recover_control_ikk,
                             solve_skeleton_ch, solve_skeleton_ikk, stability_experiment, uniqueness_constant,
                             weighted_solve)
from kaclab.trajectory import ControlField, FeedbackControl, FunctionControl, Trajectory

N = 64
X = grid_points(N)


def cosine(amp=0.4):
    return Field(amp * np.cos(2 * np.pi * X))


def dense_weighted_solve(w_half, f):
    n = f.size
    h = 1.0 / n
    A = np.zeros((n, n))
    for j in range(n):
        A[j, (j + 1) % n] += w_half[j] / h**2
        A[j, j] -= (w_half[j] + w_half[j - 1]) / h**2
        A[j, (j - 1) % n] += w_half[j - 1] / h**2
    A = np.vstack([A, np.ones(n)])
    rhs = np.concatenate([f, [0.0]])
    return np.linalg.lstsq(A, rhs, rcond=None)[0]


def test_weighted_solve_matches_dense_solver(rng):
    w = 0.2 + rng.random(32)
    f = rng.normal(size=32)
    f -= f.mean()
    psi, flux = weighted_solve(w, f)
    assert np.allclose(psi, dense_weighted_solve(w, f), atol=1e-10)
    assert elliptic_residual(w, psi, f) < 1e-10
    assert np.allclose(flux, w * (np.roll(psi, -1) - psi) * 32, atol=1e-9)


def test_weighted_solve_constant_weight_is_inverse_laplacian():
    f = np.cos(2 * np.pi * X)
    psi, _ = weighted_solve(np.ones(N), f)
    lam = (2 - 2 * np.cos(2 * np.pi / N)) * N**2  # discrete symbol
    assert np.allclose(psi, -f / lam, atol=1e-12)


def test_ch_round_trip_mean_zero_control():
    T = 0.05
    p = CHParams(noise_mode="off", T=T, dt=1e-5, stride=4)
    fn = lambda t, x: 2 * np.sin(np.pi * t / T) * np.cos(2 * np.pi * x) + np.sin(6 * np.pi * x)
    tr = solve_skeleton_ch(cosine(), FunctionControl(fn, N), p)
    _, rate = recover_control_ch(tr, p)
    ts = np.linspace(0, T, 4001)
    ref = 0.5 * np.trapezoid([np.mean(fn(s, X) ** 2) for s in ts], ts)
    assert rate.value == pytest.approx(ref, rel=0.02)
    assert rate.residual_norm < 1e-10


def test_ch_mean_of_control_is_not_recoverable():
    T = 0.05
    p = CHParams(noise_mode="off", T=T, dt=1e-5, stride=4)
    fn = lambda t, x: np.cos(2 * np.pi * x) + 0.7
    tr = solve_skeleton_ch(cosine(), FunctionControl(fn, N), p)
    _, rate = recover_control_ch(tr, p)
    assert rate.value == pytest.approx(0.5 * 0.5 * T, rel=0.02)
    assert rate.value < 0.5 * (0.5 + 0.49) * T


def test_zero_control_has_zero_rate():
    p = CHParams(noise_mode="off", T=0.05, dt=1e-5, stride=4)
    tr = solve_skeleton_ch(cosine(), None, p)
    _, rate = recover_control_ch(tr, p)
    assert rate.value <= 1e-6 * np.mean(tr.values**2)


def test_ch_recovery_rejects_mass_leak():
    t = np.linspace(0, 0.1, 6)
    v = np.array([np.full(N, s) for s in t])
    with pytest.raises(RecoveryError, match="mean"):
        recover_control_ch(Trajectory(t, v), CHParams())


def test_recovery_needs_three_snapshots():
    with pytest.raises(RecoveryError):
        recover_control_ch(Trajectory([0.0, 0.1], np.zeros((2, N))), CHParams())


def gradient_feedback(gamma, T, amp=0.5):
    def fb(t, u):
        w = 1 - gamma ** (2 / 3) * u**2
        phi = np.broadcast_to(amp * np.sin(np.pi * t / T) * np.sin(2 * np.pi * X), np.shape(u))
        return np.sqrt(w) * spectral_derivative(phi, 1)
    return fb


def test_ikk_round_trip_weighted_form():
    T, g = 0.05, 0.25
    q = IKKParams(gamma=g, T=T, dt=1e-5, stride=4, epsilon=0.0)
    fb = gradient_feedback(g, T)
    tr = solve_skeleton_ikk(cosine(), FeedbackControl(fb), q)
    _, rate = recover_control_ikk(tr, q)
    gs = np.array([fb(s, u) for s, u in zip(tr.times, tr.values)])
    ref = 0.5 * np.trapezoid(np.mean(gs**2, axis=1), tr.times)
    assert rate.value == pytest.approx(ref, rel=0.02)
    assert rate.elliptic_residual < 1e-10


def test_ikk_recovered_rate_is_minimal():
    T, g = 0.05, 0.25
    q = IKKParams(gamma=g, T=T, dt=1e-5, stride=4, epsilon=0.0)
    fn = lambda t, x: 2 * np.cos(2 * np.pi * x) + np.sin(4 * np.pi * x) ** 2
    tr = solve_skeleton_ikk(cosine(), FunctionControl(fn, N), q)
    _, rate = recover_control_ikk(tr, q)
    supplied = 0.5 * T * np.mean(fn(0, X) ** 2)
    assert rate.value <= supplied * (1 + 1e-3)


def test_ikk_recovery_refuses_degenerate_weight():
    g = 0.5
    b = g ** (-1 / 3)
    v = np.tile(np.where(X == 0, b, 0.0), (4, 1))
    v = v + np.linspace(0, 1e-3, 4)[:, None] * np.cos(2 * np.pi * X)
    v[:, N // 2] = b
    with pytest.raises(RecoveryError, match="below floor"):
        recover_control_ikk(Trajectory(np.linspace(0, 0.01, 4), v), IKKParams(gamma=g))


def test_project_mean_warns(caplog):
    g = ControlField(np.array([0.0, 1.0]), np.ones((2, 8)))
    with caplog.at_level(logging.WARNING):
        out = project_mean(g)
    assert np.allclose(out.values, 0.0)
    assert "spatial mean" in caplog.text


def test_stability_with_zero_oscillation():
    p = CHParams(noise_mode="off", T=0.02)
    rep = stability_experiment(FunctionControl(lambda t, x: np.cos(2 * np.pi * x), N), Field.zeros(N),
                               [1, 2], cosine(), p)
    assert rep.distances == [0.0, 0.0]
    with pytest.raises(ValueError):
        stability_experiment(None, Field.zeros(N), [4, 1], cosine(), p)


def test_gamma_experiment_with_zero_control():
    p_ch = CHParams(noise_mode="off", T=0.02, dt=1e-5, stride=4)
    p_ikk = IKKParams(gamma=0.5, T=0.02, dt=1e-5, stride=4, epsilon=0.0)
    rows = gamma_convergence_experiment(cosine(), None, [0.5, 0.125], p_ikk, p_ch)
    assert all(r.rate_ch < 1e-6 and r.rate_ikk < 1e-6 for r in rows)
    assert rows[1].distance < rows[0].distance


def test_mollified_initial_data():
    u0 = cosine()
    a = mollified_initial_data(u0, 0.5)
    b = mollified_initial_data(u0, 0.05)
    assert a.mean() == pytest.approx(u0.mean(), abs=1e-14)
    assert (b - u0).l2_norm() < (a - u0).l2_norm()


def test_uniqueness_constant_is_stable_in_dt():
    vals = []
    for dt in (2e-5, 1e-5):
        p = CHParams(noise_mode="off", T=0.05, dt=dt, stride=5)
        vals.append(uniqueness_constant(cosine(0.4), cosine(0.35), None, p))
    assert vals[0] > 0 and abs(vals[0] - vals[1]) / vals[1] < 0.05


def test_l2l2_distance_of_constant_gap():
    t = np.linspace(0, 2, 11)
    a = Trajectory(t, np.zeros((11, 8)))
    b = Trajectory(t, np.full((11, 8), 3.0))
    assert l2l2_distance(a, b) == pytest.approx(3 * np.sqrt(2))
