"""Exception hierarchy.

Two families are kept apart so the command line can map them onto exit
codes: :class:`ValidationError` (bad inputs, exit 1) and
:class:`NumericalError` (a solver or simulation failed, exit 2).
"""


class TpiFilterError(Exception):
    pass


class ValidationError(TpiFilterError, ValueError):
    pass


class NumericalError(TpiFilterError, ArithmeticError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class InvalidParams(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class OutOfDomain(ValidationError):
    """A noise value sits on or outside its bound, where atanh diverges."""


class NotScalarOutput(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class ZeroReference(ValidationError):
    pass


class SingularSylvester(NumericalError):
    pass


class NoStabilizingInit(NumericalError):
    pass


class NewtonDiverged(NumericalError):
    pass


class SingularR(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class Diverged(NumericalError):
    pass


class UnstableFilter(NumericalError):
    pass
