"""Function approximators with exact gradients, and their optimizers.

Every net exposes the same small surface:

``forward(x)``
    batch evaluation, ``x`` of shape ``(batch, n_in)`` or ``(n_in,)``.
``input_gradient(x)``
    ``dV/dx`` for scalar-output nets.
``param_gradient(x, upstream)``
    gradient of ``sum_b upstream_b . forward(x_b)`` over all parameters,
    returned flat.
``mixed_gradient(x, c)``
    gradient of ``sum_b dV(x_b)/dx . c_b`` over all parameters, flat.

Parameters are a list of arrays (``net.params``); ``net.flat`` and
``net.set_flat`` convert to and from one vector so optimizers can stay
generic.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionMismatch, NotScalarOutput, ShapeMismatch

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


def selu(a):
    return SELU_LAMBDA * np.where(a > 0, a, SELU_ALPHA * np.expm1(np.minimum(a, 0.0)))


def selu_d1(a):
    return SELU_LAMBDA * np.where(a > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(a, 0.0)))


def selu_d2(a):
    return SELU_LAMBDA * np.where(a > 0, 0.0, SELU_ALPHA * np.exp(np.minimum(a, 0.0)))


def _batch(x, n):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != n:
        raise DimensionMismatch(f"input must have trailing dimension {n}, got {np.shape(x)}")
    return x, single


def _upstream(up, batch, n_out):
    up = np.asarray(up, dtype=float)
    if n_out == 1 and up.shape in ((batch,), ()):
        up = np.broadcast_to(up, (batch,)).reshape(batch, 1)
    up = np.atleast_2d(up)
    if up.shape != (batch, n_out):
        raise DimensionMismatch(f"upstream must be {(batch, n_out)}, got {up.shape}")
    return up


class _Net:
    params: list
    n_out: int

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ShapeMismatch(f"expected {self.n_params} parameters, got {vec.shape}")
        i = 0
        for p in self.params:
            p[...] = vec[i:i + p.size].reshape(p.shape)
            i += p.size

    def copy(self):
        return copy.deepcopy(self)

    def _require_scalar(self):
        if self.n_out != 1:
            raise NotScalarOutput(f"{type(self).__name__} has {self.n_out} outputs")


def quadratic_features(n: int):
    """Index pairs ``(i, j)``, ``i <= j``, of degree-2 monomials in canonical order."""
    return list(combinations_with_replacement(range(n), 2))


class QuadraticValueNet(_Net):
    """``V(x) = omega . sigma(x)`` over all degree-2 monomials."""

    n_out = 1

    def __init__(self, n: int, omega=None):
        self.n = n
        self.pairs = quadratic_features(n)
        self._i = np.array([p[0] for p in self.pairs])
        self._j = np.array([p[1] for p in self.pairs])
        if omega is None:
            omega = np.where(self._i == self._j, 0.1, 0.0)
        omega = np.array(omega, dtype=float)
        if omega.shape != (len(self.pairs),):
            raise ShapeMismatch(f"omega must have {len(self.pairs)} entries")
        self.params = [omega]

    @property
    def omega(self) -> np.ndarray:
        return self.params[0]

    @classmethod
    def from_matrix(cls, Pm) -> "QuadraticValueNet":
        """Weights representing ``x^T Pm x`` (``Pm`` symmetric)."""
        Pm = np.asarray(Pm, dtype=float)
        net = cls(Pm.shape[0])
        net.params[0][:] = np.where(net._i == net._j, 1.0, 2.0) * Pm[net._i, net._j]
        return net

    def features(self, x):
        x, _ = _batch(x, self.n)
        return x[:, self._i] * x[:, self._j]

    def forward(self, x):
        xb, single = _batch(x, self.n)
        out = self.features(xb) @ self.omega
        return out[0] if single else out

    def _jac(self, x):
        # d sigma_k / d x_l, shape (batch, k, n)
        xb, _ = _batch(x, self.n)
        J = np.zeros((xb.shape[0], len(self.pairs), self.n))
        k = np.arange(len(self.pairs))
        J[:, k, self._i] += xb[:, self._j]
        J[:, k, self._j] += xb[:, self._i]
        return J

    def input_gradient(self, x):
        xb, single = _batch(x, self.n)
        g = np.einsum("bkn,k->bn", self._jac(xb), self.omega)
        return g[0] if single else g

    def param_gradient(self, x, upstream):
        xb, _ = _batch(x, self.n)
        up = _upstream(upstream, xb.shape[0], 1)
        return self.features(xb).T @ up[:, 0]

    def mixed_gradient(self, x, c):
        xb, _ = _batch(x, self.n)
        cb = np.broadcast_to(np.asarray(c, dtype=float), xb.shape)
        return np.einsum("bkn,bn->k", self._jac(xb), cb)


class LinearNoiseNet(_Net):
    """``w(x) = eta^T x``."""

    def __init__(self, n: int, n_out: int | None = None, eta=None):
        self.n = n
        self.n_out = n if n_out is None else n_out
        eta = np.zeros((n, self.n_out)) if eta is None else np.array(eta, dtype=float)
        if eta.shape != (n, self.n_out):
            raise ShapeMismatch(f"eta must be {(n, self.n_out)}, got {eta.shape}")
        self.params = [eta]

    @property
    def eta(self) -> np.ndarray:
        return self.params[0]

    def forward(self, x):
        xb, single = _batch(x, self.n)
        out = xb @ self.eta
        return out[0] if single else out

    def input_gradient(self, x):
        self._require_scalar()
        xb, single = _batch(x, self.n)
        g = np.broadcast_to(self.eta[:, 0], xb.shape).copy()
        return g[0] if single else g

    def param_gradient(self, x, upstream):
        xb, _ = _batch(x, self.n)
        up = _upstream(upstream, xb.shape[0], self.n_out)
        return (xb.T @ up).ravel()

    def mixed_gradient(self, x, c):
        self._require_scalar()
        xb, _ = _batch(x, self.n)
        cb = np.broadcast_to(np.asarray(c, dtype=float), xb.shape)
        return cb.sum(axis=0)


class GainNet(_Net):
    """Constant gain ``K(theta) = theta``."""

    def __init__(self, n: int, r: int, theta=None):
        theta = np.zeros((n, r)) if theta is None else np.array(theta, dtype=float)
        if theta.shape != (n, r):
            raise ShapeMismatch(f"theta must be {(n, r)}, got {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ShapeMismatch("theta has non-finite entries")
        self.n, self.r = n, r
        self.n_out = n * r
        self.params = [theta]

    @property
    def theta(self) -> np.ndarray:
        return self.params[0]

    def forward(self, x=None):
        return self.theta.copy()

    def param_gradient(self, x, upstream):
        up = np.asarray(upstream, dtype=float)
        if up.shape != self.theta.shape:
            raise DimensionMismatch(f"upstream must be {self.theta.shape}, got {up.shape}")
        return up.ravel().copy()


class Mlp(_Net):
    """Fully connected net: SELU hidden layers, ``scale * tanh`` output.

    ``scale`` is a scalar or one positive range per output, so every
    output stays strictly inside ``(-scale, scale)``.
    """

    def __init__(self, widths, scale=1.0, rng: np.random.Generator | None = None, init: str = "normal"):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ShapeMismatch(f"invalid layer widths {widths}")
        self.widths = widths
        self.n = widths[0]
        self.n_out = widths[-1]
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (self.n_out,)).copy()
        if np.any(scale <= 0):
            raise ShapeMismatch("output scale must be positive")
        self.scale = scale
        rng = np.random.default_rng(0) if rng is None else rng
        self.params = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            if init == "zeros":
                W = np.zeros((fan_out, fan_in))
            else:
                W = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in))
            self.params += [W, np.zeros(fan_out)]

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def _layers(self):
        return [(self.params[2 * k], self.params[2 * k + 1]) for k in range(self.n_layers)]

    def _forward_cache(self, x):
        pre, post = [], [x]
        h = x
        layers = self._layers()
        for k, (W, b) in enumerate(layers):
            a = h @ W.T + b
            pre.append(a)
            if k < len(layers) - 1:
                h = selu(a)
                post.append(h)
        return pre, post

    def preactivation(self, x):
        xb, single = _batch(x, self.n)
        a = self._forward_cache(xb)[0][-1]
        return a[0] if single else a

    def forward(self, x):
        xb, single = _batch(x, self.n)
        a = self._forward_cache(xb)[0][-1]
        y = self.scale * np.tanh(a)
        if self.n_out == 1:
            y = y[:, 0]
        return y[0] if single else y

    def _backward(self, pre, post, dA):
        grads = [None] * len(self.params)
        layers = self._layers()
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            grads[2 * k] = dA.T @ post[k]
            grads[2 * k + 1] = dA.sum(axis=0)
            dH = dA @ W
            if k == 0:
                return grads, dH
            dA = dH * selu_d1(pre[k - 1])

    def param_gradient_pre(self, x, upstream_pre):
        """Parameter gradient for an upstream on the pre-tanh output."""
        xb, _ = _batch(x, self.n)
        up = _upstream(upstream_pre, xb.shape[0], self.n_out)
        pre, post = self._forward_cache(xb)
        grads, _ = self._backward(pre, post, up)
        return np.concatenate([g.ravel() for g in grads])

    def param_gradient(self, x, upstream):
        xb, _ = _batch(x, self.n)
        up = _upstream(upstream, xb.shape[0], self.n_out)
        pre, post = self._forward_cache(xb)
        t = np.tanh(pre[-1])
        grads, _ = self._backward(pre, post, up * self.scale * (1.0 - t**2))
        return np.concatenate([g.ravel() for g in grads])

    def input_gradient(self, x):
        self._require_scalar()
        xb, single = _batch(x, self.n)
        pre, post = self._forward_cache(xb)
        t = np.tanh(pre[-1])
        _, dx = self._backward(pre, post, self.scale * (1.0 - t**2))
        return dx[0] if single else dx

    def mixed_gradient(self, x, c):
        """Gradient over parameters of ``sum_b dV(x_b)/dx . c_b`` (forward-over-reverse)."""
        self._require_scalar()
        xb, _ = _batch(x, self.n)
        cb = np.broadcast_to(np.asarray(c, dtype=float), xb.shape)
        layers = self._layers()
        L = len(layers)
        pre, post = self._forward_cache(xb)
        # tangent pass along c
        dpre, dpost = [], [cb]
        dh = cb
        for k, (W, _) in enumerate(layers):
            da = dh @ W.T
            dpre.append(da)
            if k < L - 1:
                dh = selu_d1(pre[k]) * da
                dpost.append(dh)
        s = self.scale[0]
        t = np.tanh(pre[-1])
        sech2 = 1.0 - t**2
        # reverse pass of G = s * sech2(a_L) * da_L
        bar_da = s * sech2
        bar_a = s * (-2.0 * t * sech2) * dpre[-1]
        grads = [None] * len(self.params)
        for k in range(L - 1, -1, -1):
            W, _ = layers[k]
            grads[2 * k] = bar_da.T @ dpost[k] + bar_a.T @ post[k]
            grads[2 * k + 1] = bar_a.sum(axis=0)
            if k == 0:
                break
            bar_dh = bar_da @ W
            bar_h = bar_a @ W
            d1 = selu_d1(pre[k - 1])
            bar_da = d1 * bar_dh
            bar_a = selu_d2(pre[k - 1]) * dpre[k - 1] * bar_dh + d1 * bar_h
        return np.concatenate([g.ravel() for g in grads])


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeMismatch(
            f"params {params.shape}, grads {grads.shape}, state {state.m.shape} differ"
        )
    t = state.step + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grads
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grads * grads
    m_hat = m / (1.0 - ADAM_BETA1**t)
    v_hat = v / (1.0 - ADAM_BETA2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS), AdamState(m, v, t)


def gd_step(params, grads, lr: float):
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape:
        raise ShapeMismatch(f"params {params.shape} and grads {grads.shape} differ")
    return params - lr * grads


# -- checkpoints ------------------------------------------------------------

CHECKPOINT_FORMAT = "tpifilter-checkpoint"


def _net_header(net) -> dict:
    if isinstance(net, QuadraticValueNet):
        return {"type": "quadratic_value", "n": net.n}
    if isinstance(net, LinearNoiseNet):
        return {"type": "linear_noise", "n": net.n, "n_out": net.n_out}
    if isinstance(net, GainNet):
        return {"type": "gain", "n": net.n, "r": net.r}
    if isinstance(net, Mlp):
        return {"type": "mlp", "widths": net.widths, "scale": net.scale.tolist()}
    raise TypeError(f"cannot serialize {type(net).__name__}")


def _net_from_header(h: dict):
    kind = h.get("type")
    if kind == "quadratic_value":
        return QuadraticValueNet(h["n"])
    if kind == "linear_noise":
        return LinearNoiseNet(h["n"], h["n_out"])
    if kind == "gain":
        return GainNet(h["n"], h["r"])
    if kind == "mlp":
        return Mlp(h["widths"], h["scale"], init="zeros")
    raise ConfigError(f"unknown net type {kind!r} in checkpoint")


def save_checkpoint(path, nets: dict, meta: dict | None = None) -> None:
    """Write nets as JSON: per net a header, then each array's shape and flat data."""
    doc = {"format": CHECKPOINT_FORMAT, "version": 1, "meta": meta or {}, "nets": {}}
    for name, net in nets.items():
        doc["nets"][name] = {
            "header": _net_header(net),
            "arrays": [{"shape": list(p.shape), "data": p.ravel().tolist()} for p in net.params],
        }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(nets, meta)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path} is not a checkpoint file")
    nets = {}
    for name, entry in doc["nets"].items():
        net = _net_from_header(entry["header"])
        if len(entry["arrays"]) != len(net.params):
            raise ConfigError(f"net {name!r}: wrong number of arrays")
        for p, arr in zip(net.params, entry["arrays"]):
            if tuple(arr["shape"]) != p.shape:
                raise ConfigError(f"net {name!r}: shape {arr['shape']} != {list(p.shape)}")
            p[...] = np.array(arr["data"], dtype=float).reshape(p.shape)
        nets[name] = net
    return nets, doc.get("meta", {})
