"""Exception hierarchy shared by all modules."""


class IncStabError(Exception):
    """Base class for every error raised by this package."""


class ExprError(IncStabError):
    pass


class ParseError(ExprError):
    """Malformed expression text. ``position`` is a 0-based character offset."""

    def __init__(self, message, position, text=""):
        self.position = position
        self.text = text
        super().__init__(f"{message} at position {position}")


class UnknownVariableError(ExprError):
    pass


class DimensionError(IncStabError):
    """Variable index or array shape outside the declared dimensions."""


class UnboundVariableError(ExprError):
    pass


class DomainError(ExprError):
    """log of a nonpositive number, sqrt of a negative one, and the like."""


class NonFiniteError(ExprError):
    pass


class NonSmoothError(ExprError):
    pass


class NotInvertibleError(IncStabError):
    pass


class PreconditionError(IncStabError):
    pass


class DivergenceError(IncStabError):
    """A trajectory left the desk-scale bound (not forward complete).

    ``time`` is the first sample time at which the bound was exceeded.
    """

    def __init__(self, message, time):
        self.time = time
        super().__init__(message)


class GradientMismatchError(IncStabError):
    pass


class SignalError(IncStabError):
    pass
