"""Exception types raised across the package."""


class CkfGaitError(Exception):
    pass


class DegenerateGeometryError(CkfGaitError, ValueError):
    """A direction needed by the body model is undefined (zero or parallel vectors)."""


class NumericalFailureError(CkfGaitError, ArithmeticError):
    """An innovation covariance could not be inverted."""


class TrialFormatError(CkfGaitError, ValueError):
    """A trial file or config failed to parse or validate."""


class InfeasibleGaitError(CkfGaitError, ValueError):
    """Requested gait parameters cannot be realised with the given body dimensions."""


class UndefinedMetricError(CkfGaitError, ValueError):
    """A metric has no value for the given input, e.g. correlation of a constant series."""
