"""H-infinity filtering with bounded noise.

Analytic game-Riccati and Kalman gains, the nonquadratic bounded-noise game,
ternary policy iteration (TPI) training, and a Monte-Carlo comparison bench.
"""

from .errors import NumericalError, TpiFilterError, ValidationError
from .game import GameWeights, hinf_solution
from .linalg import gare_solve, lyap_solve
from .plant import BicycleParams, LinearPlant, NoiseBounds, NoiseDistribution, bicycle_plant
from .tpi import TpiConfig, train

__all__ = [
    "BicycleParams",
    "GameWeights",
    "LinearPlant",
    "NoiseBounds",
    "NoiseDistribution",
    "NumericalError",
    "TpiConfig",
    "TpiFilterError",
    "ValidationError",
    "bicycle_plant",
    "gare_solve",
    "hinf_solution",
    "lyap_solve",
    "train",
]

__version__ = "0.1.0"
