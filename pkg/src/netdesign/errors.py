"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors (1), data errors (2),
infeasibility (3) and numerical failures (4).
"""


class NetdesignError(Exception):
    """Base class for all package-specific errors."""


class GraphFormatError(NetdesignError):
    """Malformed edge-list or covariate file. Message carries file and line."""


class DataError(NetdesignError):
    """Inconsistent inputs, e.g. covariate rows not matching node count."""


class RankError(NetdesignError):
    """A matrix that must have full column rank does not."""


class NotPositiveDefiniteError(NetdesignError):
    """A matrix required to be positive definite failed its factorization."""


class DegenerateDesignError(NetdesignError):
    """Design lies (numerically) in the covariate span; precision is zero."""


class InfeasibleError(NetdesignError):
    """No assignment satisfies the balance and network constraints."""


class EigenSolverError(NetdesignError):
    """Iterative eigenvalue computation failed to converge."""


class StudySpecError(NetdesignError):
    """Malformed study configuration. Message names the offending key."""
