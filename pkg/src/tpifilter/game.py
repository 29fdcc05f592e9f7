"""Zero-sum filtering game: utilities, Hamiltonian and saddle-point formulas.

Two penalty modes are supported:

``quadratic``
    noise cost ``|w|^2_{Q^-1} + |v|^2_{R^-1}``; the game reduces to the
    GARE and the H-infinity gain ``K = P C^T R^-1``.
``bounded``
    noise cost ``F(w) + F(v)`` with the tanh-inverse line integral
    ``F(w) = 2 * sum_i q_i wbar_i * int_0^{w_i} atanh(s / wbar_i) ds``.
    Worst-case noise is then a scaled tanh and never leaves its bound.

Vectors may carry a leading batch axis; scalar results then have the
batch shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidParams, OutOfDomain, SingularR
from .linalg import as_matrix, game_coupling, gare_solve, is_pos_def
from .plant import LinearPlant, NoiseBounds, error_dynamics

MODES = ("quadratic", "bounded")


@dataclass(frozen=True)
class GameWeights:
    Q: np.ndarray
    R: np.ndarray
    S: np.ndarray
    gamma: float
    bounds: NoiseBounds | None = None
    mode: str = "quadratic"

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidParams(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise InvalidParams(f"gamma must be positive, got {self.gamma}")
        for name in ("Q", "R", "S"):
            m = as_matrix(getattr(self, name), name)
            if m.shape[0] != m.shape[1] or not np.allclose(m, m.T):
                raise InvalidParams(f"{name} must be symmetric")
            if not is_pos_def(m):
                raise InvalidParams(f"{name} must be positive definite")
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.mode == "bounded":
            if self.bounds is None:
                raise InvalidParams("bounded mode needs noise bounds")
            for name in ("Q", "R"):
                m = getattr(self, name)
                if np.any(m - np.diag(np.diag(m))):
                    raise InvalidParams(f"bounded mode requires a diagonal {name}")
            if self.bounds.w_bar.shape != (self.Q.shape[0],) or self.bounds.v_bar.shape != (self.R.shape[0],):
                raise InvalidParams("noise bound lengths must match Q and R")

    @property
    def q_diag(self) -> np.ndarray:
        return np.diag(self.Q)

    @property
    def r_diag(self) -> np.ndarray:
        return np.diag(self.R)

    def with_mode(self, mode: str) -> "GameWeights":
        return GameWeights(self.Q, self.R, self.S, self.gamma, self.bounds, mode)


def _mode(weights, mode):
    mode = weights.mode if mode is None else mode
    if mode not in MODES:
        raise InvalidParams(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def log_cosh(u):
    a = np.abs(u)
    return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)


def nq_penalty(noise, bounds_diag, weight_diag):
    """Nonquadratic noise penalty ``F`` by its closed form.

    Raises :class:`OutOfDomain` if any component touches its bound.
    """
    noise = np.asarray(noise, dtype=float)
    a = np.asarray(bounds_diag, dtype=float)
    q = np.asarray(weight_diag, dtype=float)
    ratio = noise / a
    if np.any(np.abs(ratio) >= 1.0):
        raise OutOfDomain("noise must lie strictly inside its bound")
    per = noise * np.arctanh(ratio) + 0.5 * a * np.log1p(-ratio**2)
    return np.sum(2.0 * q * a * per, axis=-1)


def nq_penalty_tanh(u, bounds_diag, weight_diag):
    """``F(bound * tanh(u))`` evaluated from the pre-activation ``u``.

    Equal to ``2 q a^2 (u tanh u - log cosh u)`` per component; finite
    even where ``tanh`` rounds to +-1.
    """
    u = np.asarray(u, dtype=float)
    a = np.asarray(bounds_diag, dtype=float)
    q = np.asarray(weight_diag, dtype=float)
    return np.sum(2.0 * q * a**2 * (u * np.tanh(u) - log_cosh(u)), axis=-1)


def nq_penalty_tanh_grad(u, bounds_diag, weight_diag):
    """Derivative of :func:`nq_penalty_tanh` with respect to ``u``."""
    u = np.asarray(u, dtype=float)
    a = np.asarray(bounds_diag, dtype=float)
    q = np.asarray(weight_diag, dtype=float)
    return 2.0 * q * a**2 * u * (1.0 - np.tanh(u) ** 2)


def _quad_form(x, M):
    return np.einsum("...i,ij,...j->...", x, M, x)


def noise_penalty(w, v, weights: GameWeights, mode=None):
    """Noise part of the utility, before multiplication by ``gamma^2``."""
    mode = _mode(weights, mode)
    if mode == "quadratic":
        return _quad_form(w, np.linalg.inv(weights.Q)) + _quad_form(v, np.linalg.inv(weights.R))
    b = weights.bounds
    return nq_penalty(w, b.w_bar, weights.q_diag) + nq_penalty(v, b.v_bar, weights.r_diag)


def utility(x_tilde, w, v, weights: GameWeights, L, mode=None):
    """``|x~|^2_{L^T S L} - gamma^2 * (noise penalty)``."""
    L = as_matrix(L, "L")
    x_tilde = np.asarray(x_tilde, dtype=float)
    state = _quad_form(x_tilde, L.T @ weights.S @ L)
    return state - weights.gamma**2 * noise_penalty(w, v, weights, mode)


def hamiltonian(x_tilde, K, v, w, grad_V, plant: LinearPlant, weights: GameWeights, mode=None):
    """``l(x~, w, v) + grad_V . ((A - K C) x~ + w - K v)``."""
    grad_V = np.asarray(grad_V, dtype=float)
    if grad_V.shape[-1:] != (plant.n,):
        raise DimensionMismatch(f"grad_V must end in dimension {plant.n}")
    drift = error_dynamics(plant, K, x_tilde, w, v)
    return utility(x_tilde, w, v, weights, plant.L, mode) + np.sum(grad_V * drift, axis=-1)


def _scaled_args(grad_V, K, weights):
    g = np.asarray(grad_V, dtype=float)
    K = np.asarray(K, dtype=float)
    c = 1.0 / (2.0 * weights.gamma**2)
    b = weights.bounds
    u_w = c * g / (weights.q_diag * b.w_bar)
    u_v = c * (g @ K) / (weights.r_diag * b.v_bar)
    return u_w, u_v


def _bounded_tanh(bound, u):
    # tanh rounds to +-1 for |u| > ~19; keep the result strictly inside the bound
    edge = np.nextafter(bound, 0.0)
    return np.clip(bound * np.tanh(u), -edge, edge)


def worst_noise_bounded(grad_V, K, weights: GameWeights):
    """Saturating worst-case noises ``(w*, v*)`` for the bounded penalty.

    Both lie strictly inside their bounds, also where ``tanh`` rounds to 1.
    """
    u_w, u_v = _scaled_args(grad_V, K, weights)
    b = weights.bounds
    return _bounded_tanh(b.w_bar, u_w), -_bounded_tanh(b.v_bar, u_v)


def worst_noise_quadratic(grad_V, K, weights: GameWeights):
    """Stationary noises ``w* = Q g / (2 gamma^2)``, ``v* = -R K^T g / (2 gamma^2)``."""
    g = np.asarray(grad_V, dtype=float)
    K = np.asarray(K, dtype=float)
    c = 1.0 / (2.0 * weights.gamma**2)
    return c * g @ weights.Q.T, -c * (g @ K) @ weights.R.T


def fixed_measurement_noise(x_tilde, K, grad_V, weights: GameWeights, mode=None):
    """Measurement noise pinned to the current gain ``K``.

    Same formula as the ``v*`` branch of the worst-case noise, with the
    supplied ``K`` in place of the optimal one. ``x_tilde`` enters only
    through ``grad_V``.
    """
    mode = _mode(weights, mode)
    if mode == "quadratic":
        return worst_noise_quadratic(grad_V, K, weights)[1]
    return worst_noise_bounded(grad_V, K, weights)[1]


def measurement_stationarity_residual(grad_V, x_tilde, v, C):
    """Outer product ``grad_V (C x~ + v)^T``; zero at a converged saddle."""
    grad_V = np.asarray(grad_V, dtype=float)
    innov = np.asarray(x_tilde, dtype=float) @ np.asarray(C).T + np.asarray(v, dtype=float)
    return grad_V[..., :, None] * innov[..., None, :]


def hinf_gain(P, C, R):
    """Filter gain ``P C^T R^{-1}``."""
    P, C, R = as_matrix(P, "P"), as_matrix(C, "C"), as_matrix(R, "R")
    try:
        return np.linalg.solve(R, C @ P.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularR("R is singular") from exc


def hinf_solution(plant: LinearPlant, weights: GameWeights, *, kalman: bool = False):
    """Solve the GARE for ``(P, K)``; ``kalman=True`` drops the game term."""
    M = game_coupling(plant.C, weights.R, plant.L, weights.S, None if kalman else weights.gamma)
    P = gare_solve(plant.A, M, weights.Q)
    return P, hinf_gain(P, plant.C, weights.R)


def quadratic_value_gradient(P, x_tilde, gamma):
    """Gradient of ``V = gamma^2 x~^T P^{-1} x~``."""
    return 2.0 * gamma**2 * np.linalg.solve(P, np.asarray(x_tilde, dtype=float).T).T


def saddle_perturbation_gap(x_tilde, K_star, P, dK, alpha, weights: GameWeights, plant: LinearPlant, w=None):
    """``H(K* + alpha dK, v(K* + alpha dK)) - H(K*, v(K*))`` in quadratic mode.

    The value function is ``gamma^2 x~^T P^{-1} x~``; ``w`` defaults to the
    worst case ``Q P^{-1} x~`` (the gap does not depend on it).
    """
    x_tilde = np.asarray(x_tilde, dtype=float)
    g = quadratic_value_gradient(P, x_tilde, weights.gamma)
    if w is None:
        w = worst_noise_quadratic(g, K_star, weights)[0]
    K_pert = np.asarray(K_star, dtype=float) + alpha * np.asarray(dK, dtype=float)

    def H(K):
        v = fixed_measurement_noise(x_tilde, K, g, weights, "quadratic")
        return hamiltonian(x_tilde, K, v, w, g, plant, weights, "quadratic")

    return H(K_pert) - H(K_star)


def saddle_gap_closed_form(x_tilde, P, dK, alpha, weights: GameWeights):
    """``alpha^2 gamma^2 |dK^T P^{-1} x~|^2_R``."""
    y = np.linalg.solve(P, np.asarray(x_tilde, dtype=float).T).T @ np.asarray(dK)
    return alpha**2 * weights.gamma**2 * _quad_form(y, weights.R)
