"""Exception hierarchy shared by all modules."""


class LassoLDPError(Exception):
    """Base class for errors raised by this package."""


class InputError(LassoLDPError, ValueError):
    """Invalid arguments: wrong shapes, out-of-range parameters, broken invariants."""


class DomainError(InputError):
    """A formula was evaluated outside the region where it is defined."""


class ConvergenceError(LassoLDPError):
    """An iterative solver did not reach its tolerance.

    Attributes
    ----------
    x : ndarray
        The last iterate.
    residual : float
        Residual of the last iterate.
    iterations : int
    """

    def __init__(self, message, x, residual, iterations):
        super().__init__(message)
        self.x = x
        self.residual = residual
        self.iterations = iterations


class NumericalError(LassoLDPError):
    """A Monte Carlo or quadrature computation produced unusable numbers."""


class ApproximationError(LassoLDPError):
    """Mollification could not meet both tolerances.

    Attributes
    ----------
    best : PiecewisePath
        The best candidate found.
    sup_gap : float
        Sup-norm distance of the candidate minus the requested delta.
    rate_gap : float
        Rate excess of the candidate minus the allowed slack.
    """

    def __init__(self, message, best, sup_gap, rate_gap):
        super().__init__(message)
        self.best = best
        self.sup_gap = sup_gap
        self.rate_gap = rate_gap
