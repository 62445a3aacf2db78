"""Exception hierarchy shared across the package.

Two families: configuration/usage problems (``ValueError`` flavored) and
numerical failures discovered at run time (``RuntimeError`` flavored). The CLI
maps the former to exit code 2 and the latter to exit code 3.
"""


class GeoopError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(GeoopError, ValueError):
    """Array shape or dtype does not match the operation's contract."""


class CapacityError(GeoopError, ValueError):
    """Input exceeds a documented size limit (dense paths, FFT length)."""


class ConfigError(GeoopError, ValueError):
    """Invalid configuration value, flag, or config-file key."""


class DataFormatError(GeoopError, ValueError):
    """On-disk artifact has an unknown magic, version, or corrupt layout."""


class UndefinedMetricError(GeoopError, ValueError):
    """Metric is undefined for the given inputs (zero-norm reference etc.)."""


class DivergenceRiskError(GeoopError, ValueError):
    """Series hypothesis violated; iterating would risk divergence."""


class NumericalError(GeoopError, RuntimeError):
    """Base for failures detected during numerical computation."""


class NonConvergenceError(NumericalError):
    """Iterative solver exhausted its budget.

    Carries the final relative residual and the iteration count.
    """

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class BlowupError(NumericalError):
    """Non-finite values appeared mid-computation.

    ``step`` localizes the failure (time step, epoch, or sample index).
    """

    def __init__(self, message: str, step: int = -1):
        super().__init__(message)
        self.step = step
