"""Ternary policy iteration (TPI) for the filtering game.

Each outer iteration does exactly one optimizer step per phase:

0. advance a pool of agents one step of the error dynamics under the
   current gain ``K(theta)``, process noise ``w(x; eta)`` and pinned
   measurement noise ``v(x; theta)``; the post-step states form the
   dataset ``D``;
1. value phase: descend ``E_D |H|`` in ``omega`` with ``v`` held fixed;
2. gain and noise phases, both evaluated at ``(theta^k, eta^k)`` with the
   freshly updated ``omega``: descend ``E_D H`` in ``theta`` (including
   the path through ``v(theta)``) and ascend it in ``eta``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .approx import (
    AdamState,
    GainNet,
    LinearNoiseNet,
    Mlp,
    QuadraticValueNet,
    adam_step,
    gd_step,
)
from .errors import Diverged, EmptyDataset, InvalidParams, ZeroReference
from .game import (
    GameWeights,
    hinf_solution,
    noise_penalty,
    nq_penalty,
    nq_penalty_tanh,
    nq_penalty_tanh_grad,
)
from .linalg import is_hurwitz
from .plant import LinearPlant, rk4

CSV_HEADER = ("iter", "value_loss", "gain_loss", "e_omega", "e_theta")
DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class TpiConfig:
    alpha_omega: float = 0.05
    alpha_theta: float = 0.05
    alpha_eta: float = 0.05
    num_agents: int = 64
    dt: float = 0.005
    reset_horizon: int = 400
    state_box: tuple = (0.1, 0.1)
    iterations: int = 25000
    halve_every: int | None = 5000
    mode: str = "quadratic"
    optimizer: str = "gd"
    seed: int = 0
    value_scale: float = 100.0
    hidden: tuple = (64, 64)
    init: str = "small"

    def __post_init__(self):
        for name in ("alpha_omega", "alpha_theta", "alpha_eta", "dt", "value_scale"):
            if not getattr(self, name) > 0:
                raise InvalidParams(f"{name} must be positive")
        if self.num_agents < 1 or self.reset_horizon < 1:
            raise InvalidParams("num_agents and reset_horizon must be positive")
        if self.iterations < 0:
            raise InvalidParams("iterations must be nonnegative")
        if self.halve_every is not None and self.halve_every < 1:
            raise InvalidParams("halve_every must be positive or None")
        if self.mode not in ("quadratic", "bounded"):
            raise InvalidParams(f"unknown mode {self.mode!r}")
        if self.optimizer not in ("gd", "adam"):
            raise InvalidParams(f"unknown optimizer {self.optimizer!r}")
        if self.init not in ("small", "kalman"):
            raise InvalidParams(f"unknown init {self.init!r}")
        if self.init == "kalman" and self.mode != "quadratic":
            raise InvalidParams("init 'kalman' is only available in quadratic mode")
        box = tuple(float(b) for b in np.atleast_1d(self.state_box))
        if any(b <= 0 for b in box):
            raise InvalidParams("state_box entries must be positive")
        object.__setattr__(self, "state_box", box)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def learning_rates(self, k: int):
        factor = 1.0 if self.halve_every is None else 0.5 ** (k // self.halve_every)
        return (self.alpha_omega * factor, self.alpha_theta * factor, self.alpha_eta * factor)


@dataclass
class TpiNets:
    value: object
    gain: GainNet
    noise: object

    def copy(self) -> "TpiNets":
        return TpiNets(self.value.copy(), self.gain.copy(), self.noise.copy())


def make_nets(cfg: TpiConfig, plant: LinearPlant, weights: GameWeights, rng=None) -> TpiNets:
    """Quadratic/linear nets in quadratic mode, SELU-Tanh MLPs in bounded mode.

    With ``cfg.init == "kalman"`` the quadratic nets start from the Kalman
    filter for the same weights: value ``gamma^2 x^T P_k^{-1} x``, gain
    ``P_k C^T R^{-1}`` and the noise's best response to that value.
    """
    n, r = plant.n, plant.r
    if cfg.mode == "quadratic":
        if cfg.init == "kalman":
            Pk, Kk = hinf_solution(plant, weights.with_mode("quadratic"), kalman=True)
            X = weights.gamma**2 * np.linalg.inv(Pk)
            eta = X @ weights.Q / weights.gamma**2
            return TpiNets(QuadraticValueNet.from_matrix(X), GainNet(n, r, Kk), LinearNoiseNet(n, eta=eta))
        return TpiNets(QuadraticValueNet(n), GainNet(n, r), LinearNoiseNet(n))
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    value = Mlp([n, *cfg.hidden, 1], cfg.value_scale, rng)
    noise = Mlp([n, *cfg.hidden, n], weights.bounds.w_bar, rng)
    return TpiNets(value, GainNet(n, r), noise)


@dataclass
class AgentPool:
    states: np.ndarray
    steps: np.ndarray
    box: np.ndarray
    rng: np.random.Generator
    resets: int = 0
    nonfinite: int = 0

    @classmethod
    def create(cls, cfg: TpiConfig, n: int, rng: np.random.Generator) -> "AgentPool":
        box = np.broadcast_to(np.asarray(cfg.state_box, dtype=float), (n,)).copy()
        states = rng.uniform(-box, box, size=(cfg.num_agents, n))
        return cls(states, np.zeros(cfg.num_agents, dtype=int), box, rng)

    def reset(self, mask):
        count = int(mask.sum())
        if count:
            self.states[mask] = self.rng.uniform(-self.box, self.box, size=(count, self.box.size))
            self.steps[mask] = 0
            self.resets += count


@dataclass
class TrainRecord:
    iter: int
    value_loss: float
    gain_loss: float
    e_omega: float | None = None
    e_theta: float | None = None


# -- Hamiltonian pieces ------------------------------------------------------

@dataclass
class _Terms:
    x: np.ndarray
    g: np.ndarray
    K: np.ndarray
    w: np.ndarray
    v: np.ndarray
    u_v: np.ndarray | None
    z_w: np.ndarray | None
    f: np.ndarray
    H: np.ndarray
    mag: np.ndarray


def _process_noise(nets, x, mode):
    if mode == "bounded":
        z = nets.noise.preactivation(x)
        return nets.noise.scale * np.tanh(z), z
    return nets.noise.forward(x), None


def _measurement_noise(K, g, weights, mode):
    c = 1.0 / (2.0 * weights.gamma**2)
    if mode == "bounded":
        u = c * (g @ K) / (weights.r_diag * weights.bounds.v_bar)
        return -weights.bounds.v_bar * np.tanh(u), u
    return -c * (g @ K) @ weights.R.T, None


def hamiltonian_terms(nets: TpiNets, x, plant: LinearPlant, weights: GameWeights, mode: str, v=None, u_v=None) -> _Terms:
    """Evaluate the approximate Hamiltonian on a batch of states.

    ``v`` overrides the pinned measurement noise (used to hold it fixed).
    In bounded mode a held noise should come with its pre-activation
    ``u_v`` so the penalty stays finite at saturation.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    g = nets.value.input_gradient(x)
    K = nets.gain.theta
    w, z_w = _process_noise(nets, x, mode)
    if v is None:
        v, u_v = _measurement_noise(K, g, weights, mode)
    elif u_v is not None:
        v = -weights.bounds.v_bar * np.tanh(u_v)
    f = x @ (plant.A - K @ plant.C).T + w - v @ K.T
    z = x @ plant.L.T
    state_cost = np.sum(z @ weights.S * z, axis=1)
    if mode == "bounded":
        b = weights.bounds
        pen = nq_penalty_tanh(z_w, b.w_bar, weights.q_diag)
        if u_v is not None:
            pen = pen + nq_penalty_tanh(u_v, b.v_bar, weights.r_diag)
        else:
            pen = pen + nq_penalty(v, b.v_bar, weights.r_diag)
    else:
        pen = noise_penalty(w, v, weights, "quadratic")
    drift = np.sum(g * f, axis=1)
    H = state_cost - weights.gamma**2 * pen + drift
    mag = np.abs(state_cost) + weights.gamma**2 * np.abs(pen) + np.abs(drift)
    return _Terms(x, g, K, w, v, u_v, z_w, f, H, mag)


def _require(dataset):
    dataset = np.atleast_2d(np.asarray(dataset, dtype=float))
    if dataset.shape[0] == 0:
        raise EmptyDataset("dataset is empty")
    return dataset


def value_loss(dataset, nets, plant, weights, mode) -> float:
    """``mean |H|`` over the dataset."""
    t = hamiltonian_terms(nets, _require(dataset), plant, weights, mode)
    return float(np.mean(np.abs(t.H)))


def gain_loss(dataset, nets, plant, weights, mode) -> float:
    """``mean H`` over the dataset (the noise loss is its negative)."""
    t = hamiltonian_terms(nets, _require(dataset), plant, weights, mode)
    return float(np.mean(t.H))


# |H| below this fraction of its term magnitudes is cancellation noise
H_ZERO_RTOL = 1e-9


def _sign(H, mag):
    """``sign(H)`` with roundoff-level values mapped to zero."""
    s = np.sign(H)
    s[np.abs(H) <= H_ZERO_RTOL * mag] = 0.0
    return s


def value_gradient(dataset, nets, plant, weights, mode):
    """Subgradient of ``mean |H|`` in ``omega`` with ``v`` treated as constant."""
    t = hamiltonian_terms(nets, _require(dataset), plant, weights, mode)
    coeff = _sign(t.H, t.mag)[:, None] * t.f
    return nets.value.mixed_gradient(t.x, coeff) / t.x.shape[0]


def gain_gradient(dataset, nets, plant, weights, mode):
    """Gradient of ``mean H`` in ``theta``, including the path through ``v(theta)``."""
    t = hamiltonian_terms(nets, _require(dataset), plant, weights, mode)
    x, g, K, v = t.x, t.g, t.K, t.v
    gam2 = weights.gamma**2
    # explicit dependence: -g (C x + v)^T
    grad = -g.T @ (x @ plant.C.T + v)
    # chain through v(theta); analytically ~0 at the pinned noise, kept for exactness
    if mode == "bounded":
        b = weights.bounds
        sech2 = 1.0 - np.tanh(t.u_v) ** 2
        dH_du = -gam2 * nq_penalty_tanh_grad(t.u_v, b.v_bar, weights.r_diag) + (g @ K) * b.v_bar * sech2
        scale = 1.0 / (2.0 * gam2 * weights.r_diag * b.v_bar)
        grad += g.T @ (dH_du * scale)
    else:
        dH_dv = -2.0 * gam2 * v @ np.linalg.inv(weights.R).T - g @ K
        grad += -(1.0 / (2.0 * gam2)) * g.T @ (dH_dv @ weights.R.T)
    return nets.gain.param_gradient(None, grad / x.shape[0])


def noise_gradient(dataset, nets, plant, weights, mode):
    """Gradient of ``-mean H`` in ``eta``."""
    t = hamiltonian_terms(nets, _require(dataset), plant, weights, mode)
    gam2 = weights.gamma**2
    n = t.x.shape[0]
    if mode == "bounded":
        b = weights.bounds
        sech2 = 1.0 - np.tanh(t.z_w) ** 2
        dH_dz = -gam2 * nq_penalty_tanh_grad(t.z_w, b.w_bar, weights.q_diag) + t.g * b.w_bar * sech2
        return -nets.noise.param_gradient_pre(t.x, dH_dz) / n
    dH_dw = -2.0 * gam2 * t.w @ np.linalg.inv(weights.Q).T + t.g
    return -nets.noise.param_gradient(t.x, dH_dw) / n


# -- optimizer plumbing ------------------------------------------------------

class _Stepper:
    """Applies GD or Adam to one net's flat parameter vector."""

    def __init__(self, net, optimizer: str):
        self.net = net
        self.optimizer = optimizer
        self.state = AdamState.zeros(net.n_params) if optimizer == "adam" else None

    def step(self, grads, lr):
        if self.optimizer == "adam":
            new, self.state = adam_step(self.net.flat, grads, self.state, lr)
        else:
            new = gd_step(self.net.flat, grads, lr)
        self.net.set_flat(new)


def value_update(nets, dataset, cfg: TpiConfig, plant, weights, stepper: _Stepper | None = None, lr=None):
    """One optimizer step on ``omega``; returns the pre-step value loss."""
    stepper = stepper or _Stepper(nets.value, cfg.optimizer)
    lr = cfg.alpha_omega if lr is None else lr
    loss = value_loss(dataset, nets, plant, weights, cfg.mode)
    stepper.step(value_gradient(dataset, nets, plant, weights, cfg.mode), lr)
    return loss


def gain_update(nets, dataset, cfg: TpiConfig, plant, weights, stepper: _Stepper | None = None, lr=None):
    """One optimizer step on ``theta``; returns the pre-step gain loss."""
    stepper = stepper or _Stepper(nets.gain, cfg.optimizer)
    lr = cfg.alpha_theta if lr is None else lr
    loss = gain_loss(dataset, nets, plant, weights, cfg.mode)
    stepper.step(gain_gradient(dataset, nets, plant, weights, cfg.mode), lr)
    return loss


def noise_update(nets, dataset, cfg: TpiConfig, plant, weights, stepper: _Stepper | None = None, lr=None):
    """One optimizer step on ``eta``; returns the pre-step noise loss."""
    stepper = stepper or _Stepper(nets.noise, cfg.optimizer)
    lr = cfg.alpha_eta if lr is None else lr
    loss = -gain_loss(dataset, nets, plant, weights, cfg.mode)
    stepper.step(noise_gradient(dataset, nets, plant, weights, cfg.mode), lr)
    return loss


# -- dataset -----------------------------------------------------------------

def generate_dataset(pool: AgentPool, nets: TpiNets, plant: LinearPlant, weights: GameWeights, cfg: TpiConfig):
    """Advance every agent one RK4 step and return the post-step states.

    Noise is evaluated at the start of the step and held. Agents past the
    reset horizon, outside twice the state box, or non-finite are
    re-sampled uniformly from the box.
    """
    x = pool.states
    K = nets.gain.theta
    g = nets.value.input_gradient(x)
    w, _ = _process_noise(nets, x, cfg.mode)
    v, _ = _measurement_noise(K, g, weights, cfg.mode)
    F = plant.A - K @ plant.C
    drive = w - v @ K.T
    with np.errstate(over="ignore", invalid="ignore"):
        new = rk4(lambda s: s @ F.T + drive, x, cfg.dt)
    pool.steps += 1
    bad = ~np.all(np.isfinite(new), axis=1)
    pool.nonfinite += int(bad.sum())
    new[bad] = 0.0
    out = bad | (pool.steps > cfg.reset_horizon) | np.any(np.abs(new) > 2.0 * pool.box, axis=1)
    pool.states = new
    pool.reset(out)
    return pool.states.copy()


def relative_errors(omega, theta, omega_star, theta_star):
    """``(|omega - omega*| / |omega*|, |theta - theta*|_F / |theta*|_F)``."""
    omega_star = np.asarray(omega_star, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    n_o, n_t = np.linalg.norm(omega_star), np.linalg.norm(theta_star)
    if n_o == 0 or n_t == 0:
        raise ZeroReference("reference weights must be nonzero")
    e_o = np.linalg.norm(np.asarray(omega, dtype=float) - omega_star) / n_o
    e_t = np.linalg.norm(np.asarray(theta, dtype=float) - theta_star) / n_t
    return float(e_o), float(e_t)


def reference_weights(plant: LinearPlant, weights: GameWeights):
    """``(omega*, theta*)`` from the GARE: ``V* = gamma^2 x^T P^{-1} x``, ``K* = P C^T R^{-1}``."""
    P, K = hinf_solution(plant, weights.with_mode("quadratic"))
    omega = QuadraticValueNet.from_matrix(weights.gamma**2 * np.linalg.inv(P)).omega.copy()
    return omega, K


class TrainingDiverged(Diverged):
    def __init__(self, message, records, nets):
        super().__init__(message)
        self.records = records
        self.nets = nets


def train(cfg: TpiConfig, plant: LinearPlant, weights: GameWeights, reference=None, nets: TpiNets | None = None):
    """Run TPI for ``cfg.iterations`` iterations.

    Returns ``(nets, records)``. With ``reference=(omega*, theta*)`` each
    record carries the relative weight errors after that iteration's
    updates. Deterministic for a fixed ``cfg.seed``.
    """
    if weights.mode != cfg.mode:
        weights = weights.with_mode(cfg.mode)
    rng = np.random.default_rng(cfg.seed)
    nets = make_nets(cfg, plant, weights, rng) if nets is None else nets
    pool = AgentPool.create(cfg, plant.n, rng)
    steppers = [_Stepper(net, cfg.optimizer) for net in (nets.value, nets.gain, nets.noise)]
    records: list[TrainRecord] = []
    for k in range(cfg.iterations):
        lr_o, lr_t, lr_e = cfg.learning_rates(k)
        data = generate_dataset(pool, nets, plant, weights, cfg)
        with np.errstate(over="ignore", invalid="ignore"):
            l_val = value_update(nets, data, cfg, plant, weights, steppers[0], lr_o)
            g_theta = gain_gradient(data, nets, plant, weights, cfg.mode)
            g_eta = noise_gradient(data, nets, plant, weights, cfg.mode)
            l_gain = gain_loss(data, nets, plant, weights, cfg.mode)
        steppers[1].step(g_theta, lr_t)
        steppers[2].step(g_eta, lr_e)
        rec = TrainRecord(k, l_val, l_gain)
        if reference is not None:
            rec.e_omega, rec.e_theta = relative_errors(nets.value.flat, nets.gain.theta, *reference)
        finite = all(np.all(np.isfinite(net.flat)) for net in (nets.value, nets.gain, nets.noise))
        if not finite or not (abs(l_val) < DIVERGENCE_LIMIT and abs(l_gain) < DIVERGENCE_LIMIT):
            raise TrainingDiverged(f"training diverged at iteration {k}", records, nets)
        records.append(rec)
    return nets, records


def gain_is_stable(plant: LinearPlant, K) -> bool:
    return is_hurwitz(plant.A - np.asarray(K) @ plant.C)


def records_to_csv(records, stream=None) -> str:
    """Write records with header ``iter,value_loss,gain_loss,e_omega,e_theta``."""
    buf = io.StringIO() if stream is None else stream
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for rec in records:
        writer.writerow([
            rec.iter,
            repr(rec.value_loss),
            repr(rec.gain_loss),
            "" if rec.e_omega is None else repr(rec.e_omega),
            "" if rec.e_theta is None else repr(rec.e_theta),
        ])
    return buf.getvalue() if stream is None else ""
