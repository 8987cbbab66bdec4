"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration/usage problems
exit 1, data problems exit 2, numerical failures exit 3.
"""


class PrefetchkitError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(PrefetchkitError):
    """Invalid configuration value or incompatible arguments."""


class DataError(PrefetchkitError):
    """Malformed or inconsistent input data."""


class OrderingError(DataError):
    """Per-user event timestamps are not strictly increasing."""


class EvaluationError(PrefetchkitError):
    """Metrics cannot be computed on the given inputs."""


class CalibrationError(EvaluationError):
    """No decision threshold satisfies the requested constraint."""

    def __init__(self, message: str, max_precision: float | None = None):
        super().__init__(message)
        self.max_precision = max_precision


class LeakageError(PrefetchkitError):
    """Training and evaluation user sets overlap."""


class SimulationError(PrefetchkitError):
    """Replay encountered an inconsistent event stream."""


class NumericalError(PrefetchkitError):
    """Training diverged or produced non-finite values.

    ``last_good`` carries the most recent finite parameter snapshot when
    one exists, so callers can persist a usable checkpoint.
    """

    def __init__(self, message: str, last_good=None):
        super().__init__(message)
        self.last_good = last_good
