"""Exception types raised across the simulator."""


class FedRegError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(FedRegError, ValueError):
    """Invalid configuration, hyperparameter or shape."""


class NumericError(FedRegError, ArithmeticError):
    """Non-finite values showed up where finite ones are required."""


class IngestionError(FedRegError, ValueError):
    """A dataset file could not be parsed.

    Args:
        message: What went wrong
        offset: Byte offset in the file where the problem was detected
        path: Optional path of the offending file
    """

    def __init__(self, message: str, offset: int = 0, path: str | None = None):
        self.offset = offset
        self.path = path
        location = f"{path} @ byte {offset}" if path else f"byte {offset}"
        super().__init__(f"{message} ({location})")
