"""
Exception types raised by odeforge.

Every error carries the process exit code the command-line front end uses
for it, and optionally the name of the pipeline stage it surfaced from.
Argument and data problems also subclass `ValueError`, numerical failures
subclass `ArithmeticError`, so callers that only know the builtin types
still catch them.
"""

from enum import IntEnum


class ExitCode(IntEnum):
    OK = 0
    UNEXPECTED = 1
    CONFIG_ERROR = 2
    DATA_ERROR = 3
    NUMERICAL_FAILURE = 4


class OdeforgeError(Exception):
    exit_code: ExitCode = ExitCode.UNEXPECTED

    def __init__(self, message: str, stage: str | None = None) -> None:
        super().__init__(message)
        self.stage = stage

    def __str__(self) -> str:
        message = super().__str__()
        if self.stage:
            return f"{self.stage}: {message}"
        return message


class ConfigError(OdeforgeError, ValueError):
    exit_code = ExitCode.CONFIG_ERROR


class CenterCapExceededError(ConfigError):
    def __init__(
        self, center_count: int, max_centers: int, suggested_delta: float
    ) -> None:
        super().__init__(
            f"RBF lattice needs at least {center_count} centers which exceeds "
            f"the cap of {max_centers}. Try a coarser grid, e.g. "
            f"delta_grid={suggested_delta:.4g}, or raise max_centers."
        )
        self.center_count = center_count
        self.max_centers = max_centers
        self.suggested_delta = suggested_delta


class DataError(OdeforgeError, ValueError):
    exit_code = ExitCode.DATA_ERROR


class SchemaError(DataError):
    pass


class NumericalError(OdeforgeError, ArithmeticError):
    exit_code = ExitCode.NUMERICAL_FAILURE


class SingularSystemError(NumericalError):
    pass


class TrajectoryEscapeError(NumericalError):
    def __init__(self, escape_time: float, escape_radius: float) -> None:
        super().__init__(
            f"Trajectory left the ball of radius {escape_radius:g} "
            f"at t={escape_time:g}. "
            "Choose an initial state inside the basin of attraction."
        )
        self.escape_time = escape_time
        self.escape_radius = escape_radius
