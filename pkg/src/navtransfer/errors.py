"""Exception types shared across the package."""


class NavTransferError(Exception):
    """Base class for all package errors."""


class ShapeError(NavTransferError, ValueError):
    pass


class NumericInputError(NavTransferError, ValueError):
    pass


class StateError(NavTransferError, RuntimeError):
    pass


class GenerationError(NavTransferError, RuntimeError):
    pass


class InvalidPoseError(NavTransferError, ValueError):
    pass


class UnreachableError(NavTransferError, RuntimeError):
    pass


class GoalError(NavTransferError, KeyError):
    pass


class DivergenceError(NavTransferError, FloatingPointError):
    pass


class ConfigError(NavTransferError, ValueError):
    pass


class ComparisonError(NavTransferError, ValueError):
    pass


class StageError(NavTransferError, RuntimeError):
    """Raised by the pipeline; ``stage`` names the stage that failed."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
