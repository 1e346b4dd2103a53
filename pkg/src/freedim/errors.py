"""Exception types shared across freedim."""


class FreedimError(Exception):
    """Base class for all errors raised by freedim."""


class InvalidParameter(FreedimError, ValueError):
    pass


class RefinementError(FreedimError, ValueError):
    """Two piecewise-constant partitions have no common cell-aligned refinement."""


class DomainError(FreedimError, ValueError):
    pass


class ShapeError(FreedimError, ValueError):
    pass


class UnsupportedRegion(FreedimError, ValueError):
    """A closed form would need a cell shape the routine does not handle."""


class KernelSpecError(FreedimError, ValueError):
    """Malformed kernel JSON document."""


class NumericalFailure(FreedimError, ArithmeticError):
    """An iterative numerical routine did not converge.

    ``diagnostics`` carries whatever the failing routine could measure
    about its input (norms, condition estimate, iteration counts).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class FitError(FreedimError, ValueError):
    pass
