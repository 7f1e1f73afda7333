"""Exception hierarchy shared by every FrameSetu module."""


class FrameSetuError(Exception):
    """Base class for all FrameSetu errors."""


class ShapeError(FrameSetuError, ValueError):
    """Tensor dimensions disagree or are not divisible as required."""


class ValidationError(FrameSetuError, ValueError):
    """Input is non-finite or a scalar argument is out of range."""


class FlowFormatError(FrameSetuError, ValueError):
    """A Middlebury .flo file is malformed."""


class CheckpointError(FrameSetuError, ValueError):
    """A checkpoint has the wrong format, version or structure."""


class ConfigError(FrameSetuError, ValueError):
    """A configuration file has unknown keys or invalid values."""


class NumericalError(FrameSetuError, ArithmeticError):
    """An invertible layer became (numerically) singular."""


class DivergenceError(FrameSetuError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, diagnostics=None, last_checkpoint=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.last_checkpoint = last_checkpoint
