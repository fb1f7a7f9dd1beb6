"""Exception hierarchy shared by every module in the package."""


class S4Error(Exception):
    """Base class for all errors raised by s4stack.

    ``feature`` is set by the layer when an error comes from one of its
    per-feature SSMs.
    """

    feature = None


class ValidationError(S4Error, ValueError):
    """Input data is malformed (wrong shape, non-finite, out of range)."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class DimensionError(ValidationError):
    """Array dimensions are inconsistent; ``field`` names the offender."""


class ConditioningError(S4Error):
    """A change of basis is singular or too ill-conditioned to trust."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class PoleError(S4Error):
    """A resolvent or discretization hits (or nearly hits) a pole."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class RankCorrectionError(S4Error):
    """The r x r Woodbury core is singular."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class SingularKernelError(S4Error):
    """A Cauchy node coincides with a pole."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DivergenceError(S4Error, ArithmeticError):
    """A recurrence or matrix power produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NumericalError(S4Error):
    """An eigensolver or factorization failed its residual check."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ExactOverflowError(S4Error, OverflowError):
    """An exact integer does not fit the requested fixed-width dtype."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index
