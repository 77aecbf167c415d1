"""Exception hierarchy shared by the solvers and the Monte-Carlo harness."""


class DysonLabError(Exception):
    """Base class for all package errors."""


class InvalidInput(DysonLabError, ValueError):
    pass


class NonConvergence(DysonLabError):
    """Iteration budget exhausted before reaching the residual tolerance.

    The last iterate and its residual are kept so callers can inspect or
    report them.
    """

    def __init__(self, message, residual=float("nan"), last=None):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual
        self.last = last


class LosesPositivity(NonConvergence):
    pass


class DegenerateDenominator(DysonLabError, ArithmeticError):
    pass


class SingularStability(DysonLabError, ArithmeticError):
    pass


class MassDeficit(DysonLabError, ValueError):
    pass


class InsufficientSignal(DysonLabError):
    pass


class NegativeProfile(InvalidInput):
    pass


class UnsupportedKind(DysonLabError, ValueError):
    pass


class IllConditioned(DysonLabError, ArithmeticError):
    pass


class InvalidCovariance(DysonLabError, ValueError):
    def __init__(self, message, min_eigenvalue=float("nan")):
        super().__init__(f"{message} (most negative eigenvalue {min_eigenvalue:.3e})")
        self.min_eigenvalue = min_eigenvalue


class BulkViolation(DysonLabError, ValueError):
    pass


class EmptyWindow(DysonLabError, ValueError):
    pass


class QuadratureFailure(DysonLabError):
    pass


class StepFloor(DysonLabError):
    """Adaptive time step fell below the floor; carries collision diagnostics."""

    def __init__(self, message, t=float("nan"), min_gap=float("nan"), index=-1):
        super().__init__(f"{message} at t={t:.6g}, min gap {min_gap:.3e} (index {index})")
        self.t = t
        self.min_gap = min_gap
        self.index = index


class TooFewGaps(DysonLabError, ValueError):
    pass
