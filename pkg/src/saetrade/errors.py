"""Exception hierarchy shared by all pipeline stages.

Three branches map onto CLI exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class SaetradeError(Exception):
    """Base class for all package errors."""


class ConfigError(SaetradeError):
    """Invalid or inconsistent configuration."""


class WidthOverflowError(ConfigError):
    """Weight truncation never reached the threshold within max_width.

    Remedy: raise the truncation threshold or max_width.
    """


class DataError(SaetradeError):
    """Input data violates a precondition or invariant."""


class ParseError(DataError):
    """Malformed input row; carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class OrderingError(DataError):
    """Timestamps are not strictly increasing."""


class CoverageError(DataError):
    """A feature series starts after the bar index it must cover."""


class InsufficientDataError(DataError):
    """Series too short for the requested window or regression."""


class DegenerateInputError(DataError):
    """Input with no variation where variation is required."""


class ShapeError(DataError):
    """Mismatched lengths or indices between paired inputs."""


class SpecMismatchError(DataError):
    """Frame columns do not match a fitted spec or model."""


class PlanViolationError(DataError):
    """Split results do not tile the planned out-of-sample span."""


class TransportError(DataError):
    """HTTP transport failure while fetching exchange data; retriable."""


class LeakageError(DataError):
    """A training stage read data at or after its test-range start."""


class EquityBreachError(DataError):
    """Simulated equity fell to zero or below."""


class NumericError(SaetradeError):
    """Numeric or estimation failure."""


class NoStationaryDError(NumericError):
    """No grid value produced a stationary series; carries the best attempt."""

    def __init__(self, best_d: float, best_p: float):
        super().__init__(
            f"no differentiation order passed the stationarity test; "
            f"best was d={best_d:g} with p={best_p:.4g}"
        )
        self.best_d = best_d
        self.best_p = best_p


class TrainingError(NumericError):
    """Training diverged; carries the last epoch with a finite loss."""

    def __init__(self, message: str, last_finite_epoch: int):
        super().__init__(f"{message} (last finite epoch: {last_finite_epoch})")
        self.last_finite_epoch = last_finite_epoch
