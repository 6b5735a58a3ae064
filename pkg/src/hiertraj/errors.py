"""Exception types shared across modules."""


class HiertrajError(Exception):
    """Base class."""


class InvalidInputError(HiertrajError, ValueError):
    """Malformed or out-of-domain argument."""


class DivergenceError(HiertrajError, ArithmeticError):
    """A rollout or simulation produced a non-finite state."""

    def __init__(self, message, index=None, time=None):
        super().__init__(message)
        self.index = index
        self.time = time


class TuningExhaustedError(HiertrajError):
    """The penalty tuning loop hit its iteration bound."""

    def __init__(self, message, level):
        super().__init__(message)
        self.level = level
