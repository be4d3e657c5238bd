class SlexpError(Exception):
    """Base class for all library errors."""


class TreeError(SlexpError, ValueError):
    """Malformed tree, process, or stopping time."""


class BudgetExceeded(SlexpError):
    """A node or enumeration budget would be exceeded."""


class KernelError(SlexpError, ValueError):
    """Invalid transition kernels or ambiguity set."""


class PreconditionError(SlexpError, ValueError):
    """An operation was called outside the hypotheses it requires."""


class TheoremViolation(SlexpError):
    """A numerical check contradicts a result that must hold.

    Raised only when the hypotheses of the result were verified, so it points
    at a bug or a numerically broken input rather than at user error.
    """


class SolverError(SlexpError):
    """The scalar root finder could not bracket or converge."""
