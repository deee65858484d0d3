"""Exception types raised across the package."""


class PopallocError(Exception):
    """Base class for all package errors."""


# measures
class ResultNegative(PopallocError):
    pass


class NotAbsolutelyContinuous(PopallocError):
    pass


# model
class ParseError(PopallocError):
    pass


class ValidationError(PopallocError):
    pass


class DimensionTooLarge(PopallocError):
    pass


# dynamics
class InfeasibleAction(PopallocError):
    pass


class NegativeSurvival(PopallocError):
    pass


class NoConvergence(PopallocError):
    def __init__(self, message, measure=None, tv=None, iterations=None):
        super().__init__(message)
        self.measure = measure
        self.tv = tv
        self.iterations = iterations


# lp
class NumericalFailure(PopallocError):
    pass


# adp
class MaxRoundsExceeded(PopallocError):
    """Row generation hit its round limit; ``best`` holds the last master solution."""

    def __init__(self, message, best=None, max_violation=None):
        super().__init__(message)
        self.best = best
        self.max_violation = max_violation


class MasterInfeasible(PopallocError):
    pass


class PrimalInfeasible(PopallocError):
    pass


# policies
class CapacityExceeded(PopallocError):
    pass


# sim
class ZeroVariance(PopallocError):
    pass
