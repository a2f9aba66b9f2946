class LggpError(Exception):
    """Base class for errors raised by this package."""


class InvalidInputError(LggpError, ValueError):
    """Inputs violate a documented precondition."""


class NumericalFailureError(LggpError, ArithmeticError):
    """A factorization or numerical routine could not be completed.

    Attributes
    ----------
    min_eigenvalue : float or None
        Smallest eigenvalue estimate of the offending matrix, if available.
    """

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
