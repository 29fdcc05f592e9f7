"""Experiment drivers: analytic gains, Monte-Carlo filter comparison, CSV output.

Comparison protocol: every trial starts from ``x(0) = x^(0) = 0``, drives the
plant with the steering input ``delta(t) = (0.5 pi / 180) sin(2 pi t / 3)`` and
draws a fresh bounded process and measurement noise sample per step (held over
the step). All filters in a trial see the same noise realization. Errors are
integrated with the rectangle rule on the sampling grid.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParams, UnstableFilter
from .game import GameWeights, hinf_solution, noise_penalty
from .linalg import game_coupling, gare_residual, gare_solve, is_hurwitz
from .plant import LinearPlant, NoiseBounds, NoiseDistribution, estimator_step, plant_step, sample_bounded_noise

RMS_SCALE = 1e4
FILTER_ORDER = ("reinforcement", "hinf", "kalman")
COMPARE_HEADER_TAIL = ("mean_ratio", "max_ratio")


def steering(t):
    """Sinusoidal steering angle in radians."""
    return (0.5 * np.pi / 180.0) * np.sin(2.0 * np.pi * np.asarray(t) / 3.0)


def state_names(n: int) -> tuple:
    return ("beta", "omega_r") if n == 2 else tuple(f"x{i + 1}" for i in range(n))


def mapped_variance(dist: NoiseDistribution, bound) -> np.ndarray:
    """Variance of ``2*bound*X - bound`` about its mean."""
    return 4.0 * np.asarray(bound, dtype=float) ** 2 * dist.variance()


def kalman_gain_from_bounds(plant: LinearPlant, bounds: NoiseBounds, w_dist: NoiseDistribution,
                            v_dist: NoiseDistribution | None = None, dt: float = 1 / 200) -> np.ndarray:
    """Kalman gain for the true noise covariances of sampled bounded noise.

    Noise held over steps of length ``dt`` has spectral density ``Var * dt``.
    """
    v_dist = w_dist if v_dist is None else v_dist
    var_w = mapped_variance(w_dist, bounds.w_bar)
    var_v = mapped_variance(v_dist, bounds.v_bar)
    if np.any(var_w <= 0) or np.any(var_v <= 0):
        raise InvalidParams("noise variance must be positive for the Kalman filter")
    Qc = np.diag(var_w * dt)
    Rc = np.diag(var_v * dt)
    M = game_coupling(plant.C, Rc, plant.L, np.eye(plant.s), None)
    P = gare_solve(plant.A, M, Qc)
    return P @ plant.C.T @ np.linalg.inv(Rc)


def check_gain(plant: LinearPlant, K, name: str = "filter") -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if not is_hurwitz(plant.A - K @ plant.C):
        raise UnstableFilter(f"{name} gain gives a non-Hurwitz A - K C")
    return K


def run_filters(plant: LinearPlant, gains: dict, W, V, dt: float):
    """Simulate the plant and one estimator per gain on given noise sequences.

    ``W`` has shape ``(steps, trials, n)`` and ``V`` ``(steps, trials, r)``.
    Returns ``(x, x_hat)`` sampled at the start of every step, with shapes
    ``(steps, trials, n)`` and ``(filters, steps, trials, n)``.
    """
    W = np.asarray(W, dtype=float)
    V = np.asarray(V, dtype=float)
    steps, trials = W.shape[:2]
    names = list(gains)
    x = np.zeros((trials, plant.n))
    xh = np.zeros((len(names), trials, plant.n))
    xs = np.empty((steps, trials, plant.n))
    xhs = np.empty((len(names), steps, trials, plant.n))
    ones = np.ones((trials, plant.m))
    for k in range(steps):
        u = steering(k * dt) * ones
        y = x @ plant.C.T + u @ plant.D.T + V[k]
        xs[k] = x
        xhs[:, k] = xh
        for i, name in enumerate(names):
            xh[i] = estimator_step(plant, gains[name], xh[i], u, y, dt)
        x = plant_step(plant, x, u, W[k], dt)
    return xs, xhs


@dataclass(frozen=True)
class TrialReport:
    """One filter on one trial: scaled RMS per state and the attenuation ratio."""

    distribution: str
    filter: str
    trial: int
    rms: tuple
    ratio: float

    @property
    def rms_beta(self) -> float:
        return self.rms[0]

    @property
    def rms_omega_r(self) -> float:
        return self.rms[1]


def trial_noise(dist: NoiseDistribution, bounds: NoiseBounds, steps: int, seed: int, trial: int, dist_index: int):
    """Noise for one trial from a generator keyed by ``(seed, dist_index, trial)``."""
    rng = np.random.default_rng([seed, dist_index, trial])
    W = sample_bounded_noise(dist, bounds.w_bar, rng, steps)
    V = sample_bounded_noise(dist, bounds.v_bar, rng, steps)
    return W, V


def trial_metrics(plant: LinearPlant, weights: GameWeights, xs, xhs, W, V, dt: float):
    """Scaled RMS ``(filters, trials, n)`` and attenuation ratio ``(filters, trials)``."""
    err = xs[None] - xhs
    rms = RMS_SCALE * np.sqrt(np.sum(err**2, axis=1) * dt)
    z = err @ plant.L.T
    num = np.sum(np.sum(z @ weights.S * z, axis=-1), axis=1) * dt
    den = np.sum(noise_penalty(W, V, weights), axis=0) * dt
    return rms, num / den


def compare(plant: LinearPlant, weights: GameWeights, bounds: NoiseBounds, distributions,
            *, trials: int = 100, duration: float = 25.0, rate: float = 200.0, seed: int = 0,
            reinforcement_gain=None, hinf_weights: GameWeights | None = None) -> list:
    """Paired Monte-Carlo comparison of the reinforcement, H-infinity and Kalman filters.

    ``weights`` supplies the noise penalty of the attenuation ratio;
    ``hinf_weights`` (default ``weights`` in quadratic form) defines the
    analytic H-infinity gain. Returns a flat list of :class:`TrialReport`.
    """
    dt = 1.0 / rate
    steps = int(round(duration * rate))
    hw = (hinf_weights or weights).with_mode("quadratic")
    base = {}
    if reinforcement_gain is not None:
        base["reinforcement"] = check_gain(plant, reinforcement_gain, "reinforcement")
    base["hinf"] = check_gain(plant, hinf_solution(plant, hw)[1], "hinf")
    reports = []
    for j, dist in enumerate(distributions):
        dist = NoiseDistribution.parse(dist) if isinstance(dist, str) else dist
        gains = dict(base)
        gains["kalman"] = check_gain(plant, kalman_gain_from_bounds(plant, bounds, dist, dist, dt), "kalman")
        noise = [trial_noise(dist, bounds, steps, seed, i, j) for i in range(trials)]
        W = np.stack([w for w, _ in noise], axis=1)
        V = np.stack([v for _, v in noise], axis=1)
        xs, xhs = run_filters(plant, gains, W, V, dt)
        rms, ratio = trial_metrics(plant, weights, xs, xhs, W, V, dt)
        for f, name in enumerate(gains):
            for i in range(trials):
                reports.append(TrialReport(dist.label, name, i, tuple(float(r) for r in rms[f, i]), float(ratio[f, i])))
    return reports


def summarize(reports) -> list:
    """Trial averages per ``(distribution, filter)`` in first-seen order."""
    groups: dict = {}
    for rep in reports:
        groups.setdefault((rep.distribution, rep.filter), []).append(rep)
    rows = []
    for (dist, name), reps in groups.items():
        rms = np.mean([r.rms for r in reps], axis=0)
        ratios = np.array([r.ratio for r in reps])
        rows.append({"distribution": dist, "filter": name, "rms": tuple(float(v) for v in rms),
                     "mean_ratio": float(ratios.mean()), "max_ratio": float(ratios.max())})
    return rows


def summary_to_csv(rows, n: int) -> str:
    """Header ``distribution,filter,rms_<state>...,mean_ratio,max_ratio``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("distribution", "filter", *(f"rms_{s}" for s in state_names(n)), *COMPARE_HEADER_TAIL))
    for row in rows:
        writer.writerow((row["distribution"], row["filter"], *(repr(v) for v in row["rms"]),
                         repr(row["mean_ratio"]), repr(row["max_ratio"])))
    return buf.getvalue()


def simulate(plant: LinearPlant, gains: dict, bounds: NoiseBounds, dist: NoiseDistribution,
             *, duration: float = 25.0, rate: float = 200.0, seed: int = 0) -> str:
    """One trajectory as CSV: ``t,delta,<states>`` then ``<filter>_<state>`` per filter."""
    dt = 1.0 / rate
    steps = int(round(duration * rate))
    gains = {name: check_gain(plant, K, name) for name, K in gains.items()}
    W, V = trial_noise(dist, bounds, steps, seed, 0, 0)
    xs, xhs = run_filters(plant, gains, W[:, None], V[:, None], dt)
    names = state_names(plant.n)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("t", "delta", *names, *(f"{g}_{s}" for g in gains for s in names)))
    for k in range(steps):
        t = k * dt
        row = [repr(t), repr(float(steering(t))), *(repr(float(v)) for v in xs[k, 0])]
        for f in range(len(gains)):
            row.extend(repr(float(v)) for v in xhs[f, k, 0])
        writer.writerow(row)
    return buf.getvalue()


def gare_report(plant: LinearPlant, weights: GameWeights, kalman: bool = False) -> dict:
    """Solve the (game or filter) Riccati equation and return ``P``, ``K`` and the residual norm."""
    gamma = None if kalman else weights.gamma
    M = game_coupling(plant.C, weights.R, plant.L, weights.S, gamma)
    P, K = hinf_solution(plant, weights, kalman=kalman)
    res = float(np.linalg.norm(gare_residual(plant.A, M, weights.Q, P)))
    return {"P": P, "K": K, "residual": res}


def gare_to_csv(report: dict) -> str:
    """Header ``quantity,row,col,value`` with entries of ``P`` and ``K`` and the residual."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("quantity", "row", "col", "value"))
    for name in ("P", "K"):
        mat = report[name]
        for i in range(mat.shape[0]):
            for j in range(mat.shape[1]):
                writer.writerow((name, i, j, repr(float(mat[i, j]))))
    writer.writerow(("residual", "", "", repr(report["residual"])))
    return buf.getvalue()
