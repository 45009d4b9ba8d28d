"""Exception types shared across the package."""


class KernelAJError(Exception):
    """Base class for all errors raised by this package."""


class NoEvents(KernelAJError):
    """Every record in the cohort is censored; no event grid can be built."""


class DegenerateRisk(KernelAJError):
    """A risk set is empty where the estimator requires it to be positive."""


class ShapeMismatch(KernelAJError):
    """Array dimensions are inconsistent with the model or each other."""


class EmptyCohort(KernelAJError):
    """An operation received a cohort with no records."""


class EmptyNeighborhood(KernelAJError):
    """No exemplar contributes to the prediction for this query point."""


class NoRisk(KernelAJError):
    """All cumulative incidence values are zero at the horizon."""


class NoComparablePairs(KernelAJError):
    """No pair of subjects is comparable for the concordance index."""


class DegenerateGrid(KernelAJError):
    """The evaluation time grid is too short to integrate over."""


class TooSmall(KernelAJError):
    """The cohort is too small to split."""


class ParseError(KernelAJError):
    """A CSV cell could not be parsed; carries row and column context."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class MissingColumn(KernelAJError):
    """A required column is absent from the input file."""


class SchemaMismatch(KernelAJError):
    """Input columns do not match the schema the model was fitted with."""


class ConfigError(KernelAJError):
    """A run configuration is invalid; carries the offending key."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
