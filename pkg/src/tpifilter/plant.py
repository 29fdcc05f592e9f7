"""Linear plant, estimator and bounded-noise models.

All state-like arguments may carry a leading batch axis: ``x`` of shape
``(n,)`` or ``(batch, n)``. Matrices multiply from the right
(``x @ A.T``) so the same code serves single trajectories and agent
pools.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidParams
from .linalg import as_matrix


@dataclass(frozen=True)
class LinearPlant:
    """``x' = A x + B u + w``, ``y = C x + D u + v``, ``z = L x``.

    ``D`` is the direct feedthrough of the known input into the
    measurement; it defaults to zero.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    L: np.ndarray
    D: np.ndarray | None = None

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        C = as_matrix(self.C, "C")
        L = as_matrix(self.L, "L")
        n = A.shape[0]
        if A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {A.shape}")
        if B.shape[0] != n or C.shape[1] != n or L.shape[1] != n:
            raise DimensionMismatch(
                f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape} L{L.shape}"
            )
        D = np.zeros((C.shape[0], B.shape[1])) if self.D is None else as_matrix(self.D, "D")
        if D.shape != (C.shape[0], B.shape[1]):
            raise DimensionMismatch(f"D must be {(C.shape[0], B.shape[1])}, got {D.shape}")
        for name, val in (("A", A), ("B", B), ("C", C), ("L", L), ("D", D)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def r(self) -> int:
        return self.C.shape[0]

    @property
    def s(self) -> int:
        return self.L.shape[0]


@dataclass(frozen=True)
class NoiseBounds:
    w_bar: np.ndarray
    v_bar: np.ndarray

    def __post_init__(self):
        for name in ("w_bar", "v_bar"):
            val = np.atleast_1d(np.array(getattr(self, name), dtype=float))
            if val.ndim != 1 or not np.all(np.isfinite(val)) or np.any(val <= 0):
                raise InvalidParams(f"{name} must be a vector of positive bounds, got {val}")
            val.setflags(write=False)
            object.__setattr__(self, name, val)


@dataclass(frozen=True)
class BicycleParams:
    """Two-degree-of-freedom vehicle parameters (SI units).

    Cornering stiffnesses follow the negative sign convention, so a
    physical vehicle has ``k_f, k_r < 0``.
    """

    m: float
    a: float
    b: float
    k_f: float
    k_r: float
    I_zz: float
    u_lon: float = 20.0

    def __post_init__(self):
        for name in ("m", "a", "b", "I_zz", "u_lon"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise InvalidParams(f"{name} must be positive, got {val}")
        for name in ("k_f", "k_r"):
            val = getattr(self, name)
            if not math.isfinite(val) or val == 0:
                raise InvalidParams(f"{name} must be finite and nonzero, got {val}")


def bicycle_plant(p: BicycleParams) -> LinearPlant:
    """Lateral bicycle model with state ``[beta, yaw_rate]``.

    Input is the steering angle; measurements are lateral acceleration
    and yaw rate. The steering feedthrough into lateral acceleration is
    kept in ``D``.
    """
    m, a, b, kf, kr, Izz, u = p.m, p.a, p.b, p.k_f, p.k_r, p.I_zz, p.u_lon
    A = np.array([
        [(kf + kr) / (m * u), (a * kf - b * kr) / (m * u**2) - 1.0],
        [(a * kf - b * kr) / Izz, (a**2 * kf + b**2 * kr) / (u * Izz)],
    ])
    B = np.array([[-kf / (m * u)], [-a * kf / Izz]])
    C = np.array([
        [(kf + kr) / m, (a * kf - b * kr) / (m * u)],
        [0.0, 1.0],
    ])
    D = np.array([[-kf / m], [0.0]])
    return LinearPlant(A=A, B=B, C=C, L=np.eye(2), D=D)


_KINDS = ("uniform", "beta", "triangular")


@dataclass(frozen=True)
class NoiseDistribution:
    """Law of the unit variable ``X`` in ``[0, 1]``.

    ``params`` is ``()`` for uniform, ``(alpha, beta)`` for beta and
    ``(lo, hi, mode)`` for triangular.
    """

    kind: str
    params: tuple = field(default_factory=tuple)

    def __post_init__(self):
        kind = self.kind.lower()
        params = tuple(float(p) for p in self.params)
        if kind not in _KINDS:
            raise InvalidParams(f"unknown noise distribution {self.kind!r}")
        if kind == "uniform" and params not in ((), (0.0, 1.0)):
            raise InvalidParams("uniform noise is U(0, 1) only")
        if kind == "uniform":
            params = ()
        if kind == "beta" and (len(params) != 2 or min(params) <= 0):
            raise InvalidParams(f"beta needs two positive shapes, got {params}")
        if kind == "triangular":
            if len(params) != 3:
                raise InvalidParams("triangular needs (lo, hi, mode)")
            lo, hi, mode = params
            if not (0.0 <= lo <= mode <= hi <= 1.0 and hi > lo):
                raise InvalidParams(f"triangular must satisfy 0<=lo<=mode<=hi<=1, got {params}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", params)

    @classmethod
    def parse(cls, label: str) -> "NoiseDistribution":
        """Parse labels such as ``U(0,1)``, ``Beta(4,2)``, ``Triang(0,1,0.6)``."""
        text = label.replace(" ", "")
        name, _, rest = text.partition("(")
        args = tuple(float(t) for t in rest.rstrip(")").split(",") if t) if rest else ()
        key = name.lower()
        if key in ("u", "uniform", "uniform01"):
            return cls("uniform", args)
        if key == "beta":
            return cls("beta", args)
        if key in ("triang", "triangular"):
            return cls("triangular", args)
        raise InvalidParams(f"cannot parse noise distribution {label!r}")

    @property
    def label(self) -> str:
        fmt = ",".join(f"{p:g}" for p in self.params)
        return {"uniform": "U(0,1)", "beta": f"Beta({fmt})", "triangular": f"Triang({fmt})"}[self.kind]

    def draw(self, rng: np.random.Generator, size=None):
        if self.kind == "uniform":
            return rng.random(size)
        if self.kind == "beta":
            return rng.beta(*self.params, size=size)
        lo, hi, mode = self.params
        if lo == mode == hi:
            return np.full(size, lo) if size is not None else lo
        return rng.triangular(lo, mode, hi, size=size)

    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5
        if self.kind == "beta":
            al, be = self.params
            return al / (al + be)
        lo, hi, mode = self.params
        return (lo + hi + mode) / 3.0

    def variance(self) -> float:
        if self.kind == "uniform":
            return 1.0 / 12.0
        if self.kind == "beta":
            al, be = self.params
            return al * be / ((al + be) ** 2 * (al + be + 1.0))
        lo, hi, mode = self.params
        return (lo**2 + hi**2 + mode**2 - lo * hi - lo * mode - hi * mode) / 18.0


def map_unit(X, bound):
    """Affine map of ``X`` in [0, 1] onto ``[-bound, bound]``."""
    return 2.0 * bound * X - bound


def sample_bounded_noise(dist: NoiseDistribution, bound, rng: np.random.Generator, size=None):
    """Draw ``2*bound*X - bound``; every element uses its own ``X``.

    With ``bound`` a vector, one call returns one independent draw per
    component (and ``size`` may prepend a batch shape).
    """
    bound = np.asarray(bound, dtype=float)
    if np.any(bound <= 0):
        raise InvalidParams("noise bound must be positive")
    if size is None and bound.ndim == 0:
        return float(map_unit(dist.draw(rng), bound))
    shape = bound.shape if size is None else tuple(np.atleast_1d(size)) + bound.shape
    return map_unit(dist.draw(rng, shape), bound)


def _check_last(x, n, name):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (n,):
        raise DimensionMismatch(f"{name} must end in dimension {n}, got {x.shape}")
    return x


def error_dynamics(plant: LinearPlant, K, x_tilde, w, v):
    """Estimation-error rate ``(A - K C) x~ + w - K v``."""
    K = np.asarray(K, dtype=float)
    if K.shape != (plant.n, plant.r):
        raise DimensionMismatch(f"K must be {(plant.n, plant.r)}, got {K.shape}")
    x_tilde = _check_last(x_tilde, plant.n, "x_tilde")
    w = _check_last(w, plant.n, "w")
    v = _check_last(v, plant.r, "v")
    return x_tilde @ (plant.A - K @ plant.C).T + w - v @ K.T


def rk4(f, x, dt):
    """One classical Runge-Kutta step of the autonomous field ``f``."""
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def plant_step(plant: LinearPlant, x, u, w, dt: float):
    """Advance ``x' = A x + B u + w`` by ``dt`` with ``u``, ``w`` held."""
    if dt <= 0:
        raise InvalidParams("dt must be positive")
    x = _check_last(x, plant.n, "x")
    drive = _check_last(u, plant.m, "u") @ plant.B.T + _check_last(w, plant.n, "w")
    return rk4(lambda s: s @ plant.A.T + drive, x, dt)


def estimator_step(plant: LinearPlant, K, x_hat, u, y, dt: float):
    """Advance ``x^' = A x^ + B u + K (y - C x^ - D u)`` by ``dt``.

    ``u`` and ``y`` are held over the step.
    """
    if dt <= 0:
        raise InvalidParams("dt must be positive")
    K = np.asarray(K, dtype=float)
    if K.shape != (plant.n, plant.r):
        raise DimensionMismatch(f"K must be {(plant.n, plant.r)}, got {K.shape}")
    x_hat = _check_last(x_hat, plant.n, "x_hat")
    u = _check_last(u, plant.m, "u")
    y = _check_last(y, plant.r, "y")
    F = plant.A - K @ plant.C
    drive = u @ plant.B.T + (y - u @ plant.D.T) @ K.T
    return rk4(lambda s: s @ F.T + drive, x_hat, dt)
