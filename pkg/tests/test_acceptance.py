"""The twelve acceptance criteria, one test each.

Every test appends a ``criterion N: PASS|FAIL ...`` line that the terminal
summary prints in order, then asserts.
"""

import time

import numpy as np
import pytest
import scipy.linalg as sla
from scipy import integrate

from tpifilter import bench, tpi
from tpifilter.approx import GainNet, LinearNoiseNet, Mlp, QuadraticValueNet
from tpifilter.cli import main
from tpifilter.game import (
    hamiltonian,
    hinf_solution,
    nq_penalty,
    quadratic_value_gradient,
    saddle_gap_closed_form,
    saddle_perturbation_gap,
    worst_noise_bounded,
    worst_noise_quadratic,
)
from tpifilter.linalg import game_coupling, gare_residual, gare_solve, is_hurwitz

from .conftest import ACCEPTANCE_LINES

DISTRIBUTIONS = ("U(0,1)", "Beta(2,2)", "Triang(0,1,0.6)", "Beta(4,2)")


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, detail


# ---------------------------------------------------------------- shared runs

@pytest.fixture(scope="module")
def bounded_run(config):
    cfg = config.tpi_config("bounded")
    nets, records = tpi.train(cfg, config.plant, config.weights_for("bounded"))
    return cfg, nets, records


@pytest.fixture(scope="module")
def comparison(config, bounded_run):
    _, nets, _ = bounded_run
    w = config.weights_for("quadratic")
    reports = bench.compare(config.plant, w, config.bounds, DISTRIBUTIONS, trials=100, duration=25.0,
                            rate=200.0, seed=0, reinforcement_gain=nets.gain.theta, hinf_weights=w)
    return reports


def mean_rms_beta(reports, dist, name):
    return float(np.mean([r.rms_beta for r in reports if r.distribution == dist and r.filter == name]))


# ------------------------------------------------------------------ criteria

def _random_instance(rng):
    n = int(rng.integers(2, 5))
    A = rng.normal(size=(n, n))
    C = rng.normal(size=(n, n))
    X = rng.normal(size=(n, n))
    Q = X @ X.T + 0.5 * np.eye(n)
    R, L, S, gamma = np.eye(n), np.eye(n), np.eye(n), 3.0
    try:
        ref = sla.solve_continuous_are(A.T, np.hstack([C.T, L.T]), Q, sla.block_diag(R, -gamma**2 * S))
    except (np.linalg.LinAlgError, ValueError):
        return None
    M = game_coupling(C, R, L, S, gamma)
    if not (is_hurwitz(A - ref @ M) and np.all(np.linalg.eigvalsh(ref) > 0)):
        return None
    return A, M, Q


def test_criterion_1_gare_correctness():
    p1 = gare_solve([[-1.0]], [[0.5]], [[1.0]])[0, 0]
    p2 = gare_solve([[-1.0]], [[1.0]], [[1.0]])[0, 0]
    scalar_ok = abs(p1 - (-2 + np.sqrt(6))) <= 1e-10 and abs(p2 - (np.sqrt(2) - 1)) <= 1e-10
    rng = np.random.default_rng(2024)
    cases = []
    while len(cases) < 100:
        inst = _random_instance(rng)
        if inst is not None:
            cases.append(inst)
    worst, stable, elapsed = 0.0, True, 0.0
    for A, M, Q in cases:
        t0 = time.perf_counter()
        P = gare_solve(A, M, Q)
        elapsed += time.perf_counter() - t0
        worst = max(worst, np.linalg.norm(gare_residual(A, M, Q, P)) / (1 + np.linalg.norm(Q)))
        stable &= is_hurwitz(A - P @ M)
    ok = scalar_ok and worst <= 1e-9 and stable and elapsed < 1.0
    record(1, ok, f"scalar errors {abs(p1 - (-2 + np.sqrt(6))):.1e}/{abs(p2 - (np.sqrt(2) - 1)):.1e}, "
                  f"max scaled residual {worst:.2e}, all Hurwitz={stable}, solve time {elapsed:.3f} s")


def test_criterion_2_hamiltonian_identity(plant, quad_weights):
    P, K = hinf_solution(plant, quad_weights)
    x = np.random.default_rng(2).normal(size=(1000, 2))
    g = quadratic_value_gradient(P, x, quad_weights.gamma)
    w, v = worst_noise_quadratic(g, K, quad_weights)
    H = np.max(np.abs(hamiltonian(x, K, v, w, g, plant, quad_weights)))
    record(2, H <= 1e-9, f"max |H| = {H:.2e} over 1000 states")


def test_criterion_3_saddle_identity(plant, quad_weights):
    P, K = hinf_solution(plant, quad_weights)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        x = rng.normal(size=2)
        dK = rng.normal(size=(2, 2))
        alpha = rng.uniform(-2, 2)
        gap = saddle_perturbation_gap(x, K, P, dK, alpha, quad_weights, plant)
        ref = saddle_gap_closed_form(x, P, dK, alpha, quad_weights)
        worst = max(worst, abs(gap - ref) / max(abs(ref), 1e-300))
    record(3, worst <= 1e-8, f"max relative gap error {worst:.2e} over 1000 draws")


def test_criterion_4_nonquadratic_penalty():
    worst = 0.0
    ratios = (-0.99, -0.9, -0.5, -0.1, 0.0, 0.1, 0.5, 0.9, 0.99)
    for wbar, q in ((0.01, 0.2), (0.05, 0.1), (1.0, 1.0), (2.0, 3.0)):
        for r in ratios:
            w = r * wbar
            val, _ = integrate.quad(lambda s: np.arctanh(s / wbar), 0.0, w, epsabs=1e-14, epsrel=1e-13, limit=200)
            worst = max(worst, abs(nq_penalty([w], [wbar], [q]) - 2 * wbar * q * val))
    zero = nq_penalty([0.0], [1.0], [1.0])
    grid = np.linspace(-0.999, 0.999, 201)
    even = np.max(np.abs(nq_penalty(grid[:, None], [1.0], [1.0]) - nq_penalty(-grid[:, None], [1.0], [1.0])))
    ok = worst <= 1e-8 and zero == 0.0 and even == 0.0
    record(4, ok, f"max |F - quadrature| = {worst:.2e}, F(0) = {zero}, max |F(w) - F(-w)| = {even:.1e}")


def test_criterion_5_bounded_worst_noise(bounded_weights):
    rng = np.random.default_rng(5)
    mags = 10.0 ** rng.uniform(-6, 6, size=(100_000, 1))
    g = rng.normal(size=(100_000, 2)) * mags
    K = rng.normal(size=(100_000, 2, 2)) * 10.0 ** rng.uniform(-2, 2, size=(100_000, 1, 1))
    b = bounded_weights.bounds
    inside = True
    for lo in range(0, 100_000, 10_000):
        sl = slice(lo, lo + 10_000)
        w, _ = worst_noise_bounded(g[sl], np.eye(2), bounded_weights)
        v = np.stack([worst_noise_bounded(g[i], K[i], bounded_weights)[1] for i in range(lo, lo + 200)])
        inside &= bool(np.all(np.abs(w) < b.w_bar) and np.all(np.abs(v) < b.v_bar))
    # full batch with a shared gain of extreme scale
    w, v = worst_noise_bounded(g, 1e6 * np.eye(2), bounded_weights)
    inside &= bool(np.all(np.abs(w) < b.w_bar) and np.all(np.abs(v) < b.v_bar))
    record(5, inside, f"1e5 gradients up to |g| ~ {np.abs(g).max():.1e}: all strictly inside bounds = {inside}")


def _fd_params(net, fun, h=1e-6):
    f0 = net.flat.copy()
    out = np.zeros_like(f0)
    for i in range(f0.size):
        e = np.zeros_like(f0)
        e[i] = h
        net.set_flat(f0 + e)
        hi = fun()
        net.set_flat(f0 - e)
        lo = fun()
        out[i] = (hi - lo) / (2 * h)
    net.set_flat(f0)
    return out


def _fd_input(fun, x, h=1e-6):
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        cols.append((fun(x + e) - fun(x - e)) / (2 * h))
    return np.stack(cols, axis=-1)


def _rel(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


def test_criterion_6_gradient_fidelity():
    rng = np.random.default_rng(6)
    worst = {"param": 0.0, "input": 0.0, "mixed": 0.0}
    for case in range(100):
        n = int(rng.integers(1, 4))
        if case % 2:
            widths = [n, *rng.integers(2, 7, size=int(rng.integers(1, 3))), 1]
            net = Mlp(widths, float(rng.uniform(0.5, 5.0)), rng)
        else:
            net = QuadraticValueNet(n, rng.normal(size=n * (n + 1) // 2))
        x = rng.normal(size=(3, n))
        up = rng.normal(size=3)
        c = rng.normal(size=(3, n))
        worst["param"] = max(worst["param"], _rel(net.param_gradient(x, up), _fd_params(net, lambda: up @ net.forward(x))))
        worst["input"] = max(worst["input"], _rel(net.input_gradient(x[0]), _fd_input(net.forward, x[0])))
        ref = _fd_params(net, lambda: np.sum(net.input_gradient(x) * c))
        worst["mixed"] = max(worst["mixed"], _rel(net.mixed_gradient(x, c), ref))
    ok = max(worst.values()) <= 1e-4
    record(6, ok, "max relative FD errors " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_7_training_convergence(config):
    plant = config.plant
    weights = config.weights_for("quadratic")
    reference = tpi.reference_weights(plant, weights)
    finals = []
    for seed in range(10):
        cfg = tpi.TpiConfig(num_agents=64, alpha_omega=0.05, alpha_theta=0.05, alpha_eta=0.05,
                            halve_every=5000, iterations=25000, seed=seed)
        _, records = tpi.train(cfg, plant, weights, reference=reference)
        finals.append((records[-1].e_omega, records[-1].e_theta))
    e_w, e_t = np.mean(finals, axis=0)
    ok = e_w <= 1e-2 and e_t <= 1e-2
    record(7, ok, f"mean final e_omega = {e_w:.3e}, e_theta = {e_t:.3e} over 10 seeds (limit 1e-2)")


def test_criterion_8_near_stationarity(plant, quad_weights):
    omega, K = tpi.reference_weights(plant, quad_weights)
    P, _ = hinf_solution(plant, quad_weights)
    X = quad_weights.gamma**2 * np.linalg.inv(P)
    nets = tpi.TpiNets(QuadraticValueNet(2, omega), GainNet(2, 2, K),
                       LinearNoiseNet(2, eta=X @ quad_weights.Q / quad_weights.gamma**2))
    cfg = tpi.TpiConfig(iterations=100, seed=8)
    _, records = tpi.train(cfg, plant, quad_weights, reference=(omega, K), nets=nets)
    d_w = max(r.e_omega for r in records)
    d_t = max(r.e_theta for r in records)
    record(8, d_w < 1e-3 and d_t < 1e-3, f"max e_omega = {d_w:.2e}, e_theta = {d_t:.2e} over 100 iterations")


def test_criterion_9_bounded_smoke(config, bounded_run):
    cfg, nets, records = bounded_run
    losses = np.array([r.value_loss for r in records])
    first, last = np.median(losses[:100]), np.median(losses[-100:])
    stable = tpi.gain_is_stable(config.plant, nets.gain.theta)
    ok = len(records) == 2000 and cfg.optimizer == "adam" and cfg.hidden == (64, 64) and last < first and stable
    record(9, ok, f"median value loss {first:.3e} -> {last:.3e}, A - K C Hurwitz = {stable}")


def test_criterion_10_filter_ordering(comparison):
    u_k = mean_rms_beta(comparison, "U(0,1)", "kalman")
    u_r = mean_rms_beta(comparison, "U(0,1)", "reinforcement")
    b_k = mean_rms_beta(comparison, "Beta(4,2)", "kalman")
    b_r = mean_rms_beta(comparison, "Beta(4,2)", "reinforcement")
    a_ok = u_k <= 1.10 * u_r
    b_ok = b_r < b_k
    record(10, a_ok and b_ok, f"(a) U(0,1) Kalman {u_k:.3f} vs reinforcement {u_r:.3f} -> {'ok' if a_ok else 'fail'}; "
                              f"(b) Beta(4,2) reinforcement {b_r:.3f} vs Kalman {b_k:.3f} -> {'ok' if b_ok else 'fail'}")


def test_criterion_11_attenuation(comparison, quad_weights):
    ratios = np.array([r.ratio for r in comparison if r.filter == "hinf"])
    limit = quad_weights.gamma**2 * 1.05
    record(11, bool(np.all(ratios <= limit)), f"max ratio {ratios.max():.4f} over {ratios.size} trials (limit {limit:.2f})")


def test_criterion_12_determinism(tmp_path):
    blobs = []
    for k in range(2):
        t, c, ck = tmp_path / f"train{k}.csv", tmp_path / f"cmp{k}.csv", tmp_path / f"ck{k}.json"
        assert main(["train", "--seed", "7", "--iterations", "300", "--out", str(t), "--checkpoint", str(ck)]) == 0
        assert main(["compare", "--seed", "7", "--trials", "5", "--checkpoint", str(ck), "--out", str(c)]) == 0
        blobs.append((t.read_bytes(), c.read_bytes()))
    same = blobs[0] == blobs[1]
    record(12, same, f"train and compare CSVs byte-identical across runs = {same}")
