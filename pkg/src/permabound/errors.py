"""Exception hierarchy shared by every module."""


class PermaboundError(Exception):
    """Base class for all library errors."""


class ValidationError(PermaboundError, ValueError):
    """Input matrix is malformed (ragged, non-square, negative, non-finite)."""


class BadDimensions(PermaboundError, ValueError):
    pass


class DomainError(PermaboundError, ValueError):
    pass


class EntryOutOfRange(DomainError):
    """An entry lies outside [0, 1] where a probability was required."""


class NotBoolean(DomainError):
    pass


class OddN(DomainError):
    pass


class TooLarge(PermaboundError, ValueError):
    """Exact computation refused because the dimension exceeds the supported cap."""


class NoPerfectMatching(PermaboundError):
    pass


class ZeroPermanent(NoPerfectMatching):
    """per(P) = 0, so the Bethe bound is vacuous."""


class NotConverged(PermaboundError, RuntimeError):
    pass


class BoundaryPoint(PermaboundError, ValueError):
    """Gradient requested at a point with an entry equal to 0 or 1 on the support."""


class Infeasible(PermaboundError, ValueError):
    pass


class Unbounded(PermaboundError):
    pass


class RejectionBudgetExceeded(PermaboundError, RuntimeError):
    pass


class CapExceeded(PermaboundError, RuntimeError):
    pass
