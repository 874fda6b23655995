"""Exception hierarchy shared by every module in the package."""


class PtmError(Exception):
    """Base class for all package errors."""


class DimensionError(PtmError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class DomainError(PtmError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class DegenerateInputError(PtmError, ValueError):
    """A vector is too close to zero to be normalized."""


class ConfigurationError(PtmError, ValueError):
    """Invalid hyperparameters, specs or mismatched parameter shapes."""


class LabelError(PtmError, ValueError):
    """Correspondence labels do not satisfy a loss's requirements."""


class UsageError(PtmError, ValueError):
    """An API was called in a way its contract does not allow."""


class EvaluationError(PtmError, ArithmeticError):
    """A function under verification produced a non-finite value."""


class AnalysisError(PtmError, RuntimeError):
    """Loss-shape analysis failed to find the expected structure."""


class TrainingDivergenceError(PtmError, ArithmeticError):
    """Loss or gradient became non-finite during training."""

    def __init__(self, message, epoch=None, step=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
