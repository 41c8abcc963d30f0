"""Exception hierarchy shared by all modules."""


class StochStabError(Exception):
    """Base class for errors raised by stochstab."""


class ValidationError(StochStabError, ValueError):
    """An input violates a documented precondition."""


class NonConvergenceError(StochStabError, ArithmeticError):
    """An iterative routine hit its cap before meeting its tolerance."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
