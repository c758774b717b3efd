"""Exception types shared across the package."""


class SemiringUsageError(ValueError):
    """Operand arity or argument combination does not fit the semiring."""


class DomainError(ValueError):
    """An input lies outside the domain of a map (e.g. a positive log-probability)."""


class LatticeStructureError(ValueError):
    """The lattice is cyclic, mis-indexed, or has dangling vertices."""


class UnsupportedError(ValueError):
    """The requested computation is not defined for this semiring or input."""


class InfeasibleAlignmentError(ValueError):
    """No alignment has nonzero probability, so normalised quantities are undefined."""
