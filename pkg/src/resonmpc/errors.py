"""Exception hierarchy shared across the package."""


class ResonMpcError(Exception):
    """Base class for all package errors."""


class ArgumentError(ResonMpcError, ValueError):
    """Invalid argument or configuration value."""


class NumericError(ResonMpcError, ArithmeticError):
    """A numerical procedure failed (singular system, divergence, ...)."""


class QuantizationError(ResonMpcError):
    """A tensor cannot be represented in the requested fixed-point format."""


class TrainingDivergenceError(NumericError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch
