"""Exception types raised across the package.

Every error carries the process exit code the command-line front end uses
when the error escapes a subcommand.
"""

from typing import Optional


class FairStitchError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(FairStitchError, ValueError):
    """Invalid configuration value; `field` holds the dotted config path when known."""

    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class ShapeError(FairStitchError, ValueError):
    exit_code = 2


class ContractError(FairStitchError):
    exit_code = 2


class RangeError(ContractError, IndexError):
    exit_code = 2


class PreconditionError(FairStitchError, ValueError):
    exit_code = 2


class DataError(FairStitchError):
    exit_code = 3


class ParseError(DataError):
    """CSV parse failure; `row` is the 1-based data row, `column` the header name."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column '{column}'")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyGroupError(DataError):
    pass


class DegenerateSplitError(DataError):
    pass


class DivergenceError(FairStitchError):
    exit_code = 4

    def __init__(self, epoch: int, learning_rate: float, value: float):
        super().__init__(
            f"objective diverged at epoch {epoch} (value={value!r}, lr={learning_rate}); "
            f"try a smaller optimizer.lr"
        )
        self.epoch = epoch
        self.learning_rate = learning_rate
        self.value = value


class CheckpointError(FairStitchError):
    exit_code = 5
