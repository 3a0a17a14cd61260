"""Exception hierarchy shared by all solver modules."""


class WextError(Exception):
    """Base class for every error raised by the package."""


class MeasureError(WextError, ValueError):
    """An atomic measure failed validation."""


class NonPositiveWeight(MeasureError):
    pass


class WeightSumMismatch(MeasureError):
    pass


class DimensionMismatch(MeasureError):
    pass


class NonFiniteCoordinate(MeasureError):
    pass


class NotOneDimensional(MeasureError):
    pass


class InvalidPlan(WextError, ValueError):
    """A transport plan is negative, misshapen or has wrong marginals."""


class InstanceTooLarge(WextError, ValueError):
    pass


class NonFiniteIntermediate(WextError, FloatingPointError):
    """Overflow or underflow in a non-log-domain kernel (epsilon too small)."""


class StepTooLarge(WextError, ValueError):
    pass


class NoConvergence(WextError, RuntimeError):
    """Iteration budget exhausted.

    The partial result is attached as ``.result`` so callers can still
    inspect the trace.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class EmptyInput(WextError, ValueError):
    pass


class TooFewSamples(WextError, ValueError):
    """More quantization atoms requested than there are samples."""
