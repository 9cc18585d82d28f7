from typing import Optional, Sequence


class LendScreenError(Exception):
    """Exception for the lendscreen package."""
    pass


class ShapeError(LendScreenError):
    """Raised when tensor shapes do not line up."""

    def __init__(self, message: str, *shapes: Sequence[int]):
        if shapes:
            message = f"{message}: " + " vs ".join(
                str(tuple(shape)) for shape in shapes)
        super().__init__(message)
        self.shapes = tuple(tuple(shape) for shape in shapes)


class ConfigError(LendScreenError):
    """Invalid configuration value. `field` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"invalid config field '{field}': {message}")
        self.field = field


class DatasetParseError(LendScreenError):

    def __init__(self, line: int, message: str, field: Optional[str] = None):
        where = f"line {line}"
        if field:
            where += f", field '{field}'"
        super().__init__(f"{where}: {message}")
        self.line = line
        self.field = field


class CheckpointError(LendScreenError):
    pass


class NumericalError(LendScreenError):
    """Non-finite loss during training."""

    def __init__(self, step: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at step {step}")
        self.step = step
