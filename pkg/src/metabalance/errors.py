"""Exception hierarchy shared across the package."""


class MetabalanceError(Exception):
    """Base class for all package errors."""


class NonBinaryTreatment(MetabalanceError):
    pass


class MissingCovariate(MetabalanceError):
    pass


class MissingOutcome(MetabalanceError):
    pass


class EmptyStudy(MetabalanceError):
    pass


class NonPositiveVariance(MetabalanceError):
    pass


class DuplicateStudyId(MetabalanceError):
    pass


class DimensionMismatch(MetabalanceError):
    pass


class IndexOutOfRange(MetabalanceError):
    pass


class EmptyWithinSet(MetabalanceError):
    pass


class Infeasible(MetabalanceError):
    """Balance constraints cannot be satisfied.

    Carries a certificate: either an unbounded dual ray or the subset of
    constraints that cannot hold simultaneously.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class MaxIterations(MetabalanceError):
    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class TooLarge(MetabalanceError):
    pass


class RankDeficient(MetabalanceError):
    pass


class NonConvergence(MetabalanceError):
    pass


class ZeroWeights(MetabalanceError):
    pass


class NotApplicable(MetabalanceError):
    pass


class DegenerateRegression(MetabalanceError):
    pass


class MissingNStar(MetabalanceError):
    pass


class RootFindFailure(MetabalanceError):
    pass


class CalibrationMissing(MetabalanceError):
    pass
