"""Exception types raised across the package."""


class CaseError(ValueError):
    """Malformed or inconsistent network case."""


class DisconnectedNetworkError(CaseError):
    """In-service branches do not connect every bus."""


class ConvergenceError(RuntimeError):
    """Newton iterations did not reach the mismatch tolerance."""

    def __init__(self, message, iterations=None, mismatch=None):
        super().__init__(message)
        self.iterations = iterations
        self.mismatch = mismatch


class SingularJacobianError(ConvergenceError):
    """Power-flow Jacobian could not be factorized."""


class DegenerateCircleError(ValueError):
    """Quadratic coefficient of a power-flow circle is (numerically) zero.

    Happens on buses whose incident branches are all lossless (t1 == 0)
    or whose net susceptance cancels (t4 == 0): the equation is a line,
    not a circle.
    """


class InfeasibleCircleError(ValueError):
    """Squared radius of a power-flow circle is negative.

    The local injection cannot be met for any voltage at this bus given the
    measured neighbour voltages. Distinct from two real circles failing to
    intersect.
    """
