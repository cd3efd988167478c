"""Exception hierarchy shared by every giqs module."""


class GiqsError(Exception):
    """Base class for toolkit errors."""


class OutOfDomainError(GiqsError, ValueError):
    """Input outside the cone, below the regularization radius, or otherwise invalid."""


class BudgetExceededError(GiqsError):
    """An enumeration or combinatorial scan would exceed the configured budget."""


class QuadratureError(GiqsError):
    """Quadrature or root bracketing did not reach the requested tolerance."""


class ConvergenceError(GiqsError):
    """An iterative procedure did not converge or diverged."""


class ModelMismatchError(GiqsError, ValueError):
    """A perturbation or operation was requested for an incompatible model."""


class FitRefusedError(GiqsError):
    """A fit was refused because its validity diagnostics failed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
