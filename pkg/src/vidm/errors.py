"""Exception types raised across the package."""


class VidmError(Exception):
    """Base class for all package errors."""


class InvalidDistribution(VidmError, ValueError):
    """Array is not a probability vector (or table of them) within tolerance."""


class SupportViolation(VidmError, ValueError):
    """q puts mass where the reference distribution p has none."""


class EmptyInput(VidmError, ValueError):
    pass


class EmptyBatch(VidmError, ValueError):
    pass


class ZeroEvidence(VidmError, ValueError):
    """Every joint weight is zero, so the posterior is undefined."""


class ShapeMismatch(VidmError, ValueError):
    pass


class TooLarge(VidmError, ValueError):
    """An enumeration guard tripped."""


class InvalidSpec(VidmError, ValueError):
    pass


class ZeroLikelihoodPrefix(VidmError, ValueError):
    """The filter assigned zero probability to the observed prefix."""


class NotConverged(VidmError, RuntimeError):
    """Iteration budget exhausted.

    The best solution found so far is attached as ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
