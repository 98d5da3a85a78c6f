"""Exception hierarchy shared by every module of the toolkit."""


class PrqError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(PrqError, ValueError):
    """Malformed input: bad shapes, out-of-range values, unknown config keys."""


class IndexOutOfRange(ValidationError, IndexError):
    pass


class NumericError(PrqError, ArithmeticError):
    """A numerical computation produced NaN/inf or an unusable result."""


class ConditioningError(NumericError):
    """A linear system was singular or too ill-conditioned to trust."""


class ModelError(NumericError):
    """The model violates a structural requirement (e.g. a reducible chain)."""


class PreconditionError(NumericError):
    """A formula was evaluated outside the regime where it is defined."""


class SizeError(ValidationError):
    """A problem exceeds a configured enumeration or size cap."""


class DivergenceError(NumericError):
    """A learner iterate left the finite / guarded region.

    ``step`` is the global step at which the guard fired and ``theta`` the
    last finite iterate before it.
    """

    def __init__(self, message, step=None, theta=None):
        super().__init__(message)
        self.step = step
        self.theta = theta
