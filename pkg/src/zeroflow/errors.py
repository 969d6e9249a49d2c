"""Exception types shared across the package."""


class ZeroflowError(Exception):
    """Base class for all package-specific failures."""


class ResolutionError(ZeroflowError):
    """Grid too coarse for the requested operation."""


class GridMismatchError(ZeroflowError):
    """Two fields or trajectories do not share a grid."""


class NonFiniteFieldError(ZeroflowError):
    """A field value is NaN or infinite."""


class StepRejectedError(ZeroflowError):
    """Advective CFL guard still violated after the halving cascade."""

    def __init__(self, message: str, sup_value: float):
        super().__init__(message)
        self.sup_value = sup_value


class BlowUpError(ZeroflowError):
    """Time stepping produced a non-finite state."""

    def __init__(self, message: str, t: float, sup_value: float):
        super().__init__(message)
        self.t = t
        self.sup_value = sup_value


class UnresolvedMatchingError(ZeroflowError):
    """Nodal curve matching is ambiguous at the given snapshot stride."""


class UnresolvedWindowError(ZeroflowError):
    """A balance window whose integer accounting does not close exactly."""


class MassMismatchError(ZeroflowError):
    """Initial mass does not match the mass slice of the target orbit."""


class NonConvergenceError(ZeroflowError):
    """Fixed-point iteration exhausted its budget."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class PositivityLostError(ZeroflowError):
    """The linearizing substitution lost strict positivity."""


class FamilyOrderingError(ZeroflowError):
    """Converged orbit family is not strictly pointwise ordered."""


class ExpressionError(ZeroflowError):
    """Syntax or name error in a config expression."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at offset {position})")
        self.position = position


class ConfigError(ZeroflowError):
    """Invalid or unknown experiment configuration."""
