"""Exception hierarchy shared by every module of the package."""


class LevyAscltError(Exception):
    """Base class for all package errors."""


class NotStabilizable(LevyAscltError):
    """U + U* is not positive definite, so the Lyapunov equation has no PD solution."""


class Singular(LevyAscltError):
    """A matrix expected to be invertible failed the factorization guard."""


class DimensionMismatch(LevyAscltError, ValueError):
    pass


class InvalidHorizon(LevyAscltError, ValueError):
    pass


class InvalidStep(LevyAscltError, ValueError):
    pass


class OutOfHorizon(LevyAscltError, ValueError):
    pass


class WeightNotIntegrable(LevyAscltError, ValueError):
    pass


class WeightMismatch(LevyAscltError, ValueError):
    pass


class MissingEvalTime(LevyAscltError, KeyError):
    pass


class DomainTooSmall(LevyAscltError, ValueError):
    """log det V_t^2 does not exceed e, where h(u) = sqrt(2u log log u) is undefined."""


class TooFewAtoms(LevyAscltError, ValueError):
    pass


class NonScalarMeasure(LevyAscltError, ValueError):
    pass


class TooFewSamples(LevyAscltError, ValueError):
    pass


class ConfigInvalid(LevyAscltError, ValueError):
    pass


class ConditionsFailed(LevyAscltError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
