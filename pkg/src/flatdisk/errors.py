"""Exception types shared across the package."""


class FlatdiskError(Exception):
    """Base class for package errors."""


class InvalidMass(FlatdiskError):
    """Requested total mass is not positive."""


class BracketFailure(FlatdiskError):
    """A bracketing search failed: the target value is not enclosed.

    Raised by the multiplier bisection when the mass map cannot reach the
    requested mass on the admissible bracket (usually the grid is too small),
    and by profile inversions when the scanned bracket never crosses.
    """


class PropertyViolation(FlatdiskError):
    """A theorem-level inequality failed beyond quadrature tolerance.

    Indicates a numerical defect (broken quadrature, corrupted input), not
    a mathematical counterexample.
    """


class NoConvergence(FlatdiskError):
    """Iteration budget exhausted before the tolerance was met.

    Carries a ``diagnostics`` dict (iterations, residual history, last state)
    so callers can inspect or persist the partial result.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
