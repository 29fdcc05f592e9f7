"""TOML configuration for plants, game weights, training and comparisons.

Schema (all matrices are nested lists; a bare number ``c`` means ``c*I``)::

    [plant]
    model = "bicycle"            # or "matrix"

    [plant.vehicle]              # bicycle model
    m = 1500.0
    a = 1.14
    b = 1.40
    k_f = -88000.0
    k_r = -94000.0
    I_zz = 2420.0
    u_lon = 20.0

    # matrix model instead: A, C required; B, L, D optional
    # A = [[-1.0]]
    # C = [[1.0]]

    [noise]                      # bounds |w| <= w_bar, |v| <= v_bar
    w_bar = [0.01, 0.05]
    v_bar = [0.01, 0.05]

    [weights.quadratic]          # required
    Q = 20.0
    R = 10.0
    S = 1.0
    gamma = 1.0
    kalman = false               # true drops the gamma term (filter CARE)

    [weights.bounded]            # Q, R must be diagonal
    Q = 0.2
    R = 0.1
    S = 1.0
    gamma = 1.0

    [train]                      # TpiConfig fields shared by both modes
    [train.quadratic]            # per-mode overrides
    [train.bounded]

    [compare]
    distributions = ["U(0,1)", "Beta(2,2)", "Triang(0,1,0.6)", "Beta(4,2)"]
    trials = 100
    duration = 25.0
    rate = 200.0

``halve_every = 0`` in a train table disables the learning-rate schedule.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .game import GameWeights
from .plant import BicycleParams, LinearPlant, NoiseBounds, NoiseDistribution, bicycle_plant
from .tpi import TpiConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_DISTRIBUTIONS = ("U(0,1)", "Beta(2,2)", "Triang(0,1,0.6)", "Beta(4,2)")
VEHICLE_FIELDS = ("m", "a", "b", "k_f", "k_r", "I_zz", "u_lon")
MODES = ("quadratic", "bounded")


@dataclass(frozen=True)
class CompareSettings:
    distributions: tuple = DEFAULT_DISTRIBUTIONS
    trials: int = 100
    duration: float = 25.0
    rate: float = 200.0

    def __post_init__(self):
        if self.trials < 1 or not self.duration > 0 or not self.rate > 0:
            raise ConfigError("compare: trials, duration and rate must be positive")
        dists = tuple(NoiseDistribution.parse(d) if isinstance(d, str) else d for d in self.distributions)
        if not dists:
            raise ConfigError("compare.distributions is empty")
        object.__setattr__(self, "distributions", dists)

    @property
    def steps(self) -> int:
        return int(round(self.duration * self.rate))


@dataclass
class Config:
    plant: LinearPlant
    weights: dict
    bounds: NoiseBounds | None = None
    kalman: bool = False
    train: dict = field(default_factory=dict)
    compare: CompareSettings = field(default_factory=CompareSettings)

    def weights_for(self, mode: str) -> GameWeights:
        if mode not in self.weights:
            raise ConfigError(f"missing section 'weights.{mode}'")
        return self.weights[mode]

    def tpi_config(self, mode: str, **overrides) -> TpiConfig:
        opts = dict(self.train.get(mode, {}))
        opts.update({k: v for k, v in overrides.items() if v is not None})
        opts["mode"] = mode
        try:
            return TpiConfig(**opts)
        except TypeError as exc:
            raise ConfigError(f"train: {exc}") from None


def _require(table: dict, key: str, path: str):
    if key not in table:
        raise ConfigError(f"missing field '{path}.{key}'" if path else f"missing field '{key}'")
    return table[key]


def _table(table: dict, key: str, path: str) -> dict:
    sub = _require(table, key, path)
    if not isinstance(sub, dict):
        raise ConfigError(f"'{path}.{key}' must be a table")
    return sub


def _matrix(value, n: int | None, name: str) -> np.ndarray:
    if isinstance(value, (int, float)):
        if n is None:
            raise ConfigError(f"'{name}' must be a matrix")
        return float(value) * np.eye(n)
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"'{name}' is not a numeric matrix") from None
    if arr.ndim != 2:
        raise ConfigError(f"'{name}' must be a nested list (matrix)")
    return arr


def _plant(tbl: dict) -> LinearPlant:
    model = tbl.get("model", "bicycle")
    if model == "bicycle":
        veh = _table(tbl, "vehicle", "plant")
        vals = {k: float(_require(veh, k, "plant.vehicle")) for k in VEHICLE_FIELDS if k != "u_lon"}
        vals["u_lon"] = float(veh.get("u_lon", 20.0))
        return bicycle_plant(BicycleParams(**vals))
    if model == "matrix":
        A = _matrix(_require(tbl, "A", "plant"), None, "plant.A")
        n = A.shape[0]
        C = _matrix(_require(tbl, "C", "plant"), None, "plant.C")
        B = _matrix(tbl["B"], None, "plant.B") if "B" in tbl else np.zeros((n, 1))
        L = _matrix(tbl.get("L", 1.0), n, "plant.L")
        D = _matrix(tbl["D"], None, "plant.D") if "D" in tbl else None
        return LinearPlant(A, B, C, L, D)
    raise ConfigError(f"plant.model must be 'bicycle' or 'matrix', got {model!r}")


def _weights(tbl: dict, path: str, plant: LinearPlant, bounds, mode: str) -> GameWeights:
    Q = _matrix(_require(tbl, "Q", path), plant.n, f"{path}.Q")
    R = _matrix(_require(tbl, "R", path), plant.r, f"{path}.R")
    S = _matrix(tbl.get("S", 1.0), plant.s, f"{path}.S")
    gamma = float(tbl.get("gamma", 1.0)) if tbl.get("kalman", False) else float(_require(tbl, "gamma", path))
    if mode == "bounded" and bounds is None:
        raise ConfigError("missing section 'noise' (bounded weights need noise bounds)")
    return GameWeights(Q, R, S, gamma, bounds=bounds, mode=mode)


def _train(doc: dict) -> dict:
    tbl = doc.get("train", {})
    known = {f.name for f in fields(TpiConfig)}
    shared = {k: v for k, v in tbl.items() if k not in MODES}
    out = {}
    for mode in MODES:
        opts = {**shared, **tbl.get(mode, {})}
        for k in list(opts):
            if k not in known:
                raise ConfigError(f"unknown field 'train.{k}'")
        if opts.get("halve_every", None) == 0:
            opts["halve_every"] = None
        if "state_box" in opts:
            opts["state_box"] = tuple(np.atleast_1d(opts["state_box"]))
        if "hidden" in opts:
            opts["hidden"] = tuple(opts["hidden"])
        out[mode] = opts
    return out


def parse_config(doc: dict) -> Config:
    """Build a :class:`Config` from an already-parsed TOML document."""
    try:
        plant = _plant(_table(doc, "plant", ""))
        bounds = None
        if "noise" in doc:
            noise = doc["noise"]
            bounds = NoiseBounds(_require(noise, "w_bar", "noise"), _require(noise, "v_bar", "noise"))
        wtbl = _table(doc, "weights", "")
        weights = {"quadratic": _weights(_table(wtbl, "quadratic", "weights"), "weights.quadratic", plant, bounds, "quadratic")}
        if "bounded" in wtbl:
            weights["bounded"] = _weights(wtbl["bounded"], "weights.bounded", plant, bounds, "bounded")
        kalman = bool(wtbl["quadratic"].get("kalman", False))
        cmp_tbl = dict(doc.get("compare", {}))
        compare = CompareSettings(**cmp_tbl)
        return Config(plant, weights, bounds, kalman, _train(doc), compare)
    except ConfigError:
        raise
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None


def load_config(path) -> Config:
    """Read and validate a TOML configuration file."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_config(doc)


def default_config_path() -> Path:
    return Path(str(resources.files("tpifilter") / "data" / "default.toml"))


def default_config() -> Config:
    return load_config(default_config_path())
