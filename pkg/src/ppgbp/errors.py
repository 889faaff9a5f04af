"""Exception types raised across the package."""


class PpgBpError(Exception):
    """Base class for all package errors."""


class InvalidBandError(PpgBpError, ValueError):
    pass


class InsufficientLengthError(PpgBpError, ValueError):
    pass


class NoDominantComponentError(PpgBpError, ValueError):
    pass


class UndefinedSNRError(PpgBpError, ValueError):
    pass


class ZeroVarianceError(PpgBpError, ValueError):
    pass


class DegenerateTraceError(PpgBpError, ValueError):
    pass


class NoLabelError(PpgBpError, ValueError):
    """Raised when a window cannot be assigned a ground-truth label."""


class InvalidSpecError(PpgBpError, ValueError):
    pass


class ContaminationError(PpgBpError, ValueError):
    """Raised when the same subject appears in two partitions of a split."""


class DivergenceError(PpgBpError, RuntimeError):
    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"loss became non-finite at epoch {epoch}")


class InsufficientDataError(PpgBpError, ValueError):
    pass


class DegenerateTestError(PpgBpError, ValueError):
    pass
