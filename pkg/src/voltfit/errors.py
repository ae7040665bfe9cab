"""Exception types shared across the package.

Every failure mode callers are expected to branch on gets its own class so
that harness code can quarantine per-replicate errors by type instead of
string-matching messages.
"""


class VoltfitError(Exception):
    """Base class for all package errors."""


class DomainError(VoltfitError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class OverflowGuardError(VoltfitError, ArithmeticError):
    """A series or closed form was rejected because it would overflow."""


class DivergenceError(VoltfitError, ArithmeticError):
    """A solved path left the configured stability region."""


class CapabilityError(VoltfitError, TypeError):
    """A model is missing an oracle required by the requested operation."""


class GridMismatchError(VoltfitError, ValueError):
    """Two objects built on different time grids were combined."""


class SingularMatrixError(VoltfitError, ArithmeticError):
    """A matrix that must be invertible is numerically singular."""


class DegenerateFitError(VoltfitError, ArithmeticError):
    """A regression or scan produced data a rate cannot be fitted to."""


class ResourceLimitError(VoltfitError, MemoryError):
    """A request exceeds the configured memory or size cap."""
