"""Exception types shared across the package."""


class EEGSzError(Exception):
    """Base class for all package errors."""


class FormatError(EEGSzError):
    """Malformed input file or stream."""


class CalibrationError(FormatError):
    """An EDF signal header has a degenerate digital range."""


class ParameterError(EEGSzError, ValueError):
    """Invalid argument value."""


class ShapeError(EEGSzError, ValueError):
    """Array shapes are incompatible with an operation."""


class ConfigError(EEGSzError, ValueError):
    """A model or pipeline configuration is inconsistent."""


class DegenerateChannelError(EEGSzError, ValueError):
    """A channel has zero variance and cannot be standardized."""


class DegenerateStatisticError(EEGSzError, ValueError):
    """A test statistic is undefined for the given data."""


class SplitError(EEGSzError, ValueError):
    """Cross-validation folds cannot be formed."""


class DivergenceError(EEGSzError, ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss
