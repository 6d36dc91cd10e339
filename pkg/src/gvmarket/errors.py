"""Typed exceptions.

Every error records where it was raised (``module.operation``) so the CLI can
report it and pick an exit code.
"""


class GVMarketError(Exception):
    """Base class. ``where`` is the originating ``module.operation``."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where

    def __str__(self):
        msg = super().__str__()
        return f"[{self.where}] {msg}" if self.where else msg


class DomainError(GVMarketError, ValueError):
    """Arguments outside the domain of an operation."""


class SingularPointError(DomainError):
    """Point evaluation requested exactly at a kernel singularity."""


class UnsupportedRegimeError(GVMarketError, ValueError):
    """Operation not defined for the requested Hurst regime or kernel family."""


class PreconditionError(GVMarketError, ValueError):
    """A structural precondition (e.g. T <= T_1, gamma < 1) is violated."""


class IncompletenessError(GVMarketError):
    """Kernel matrix is rank deficient, so no left inverse exists."""

    def __init__(self, message, where=None, t=None):
        super().__init__(message, where)
        self.t = t


class ArbitrageInconsistentError(GVMarketError):
    """Observed drifts are not in the range of the kernel matrix."""

    def __init__(self, message, where=None, residual=None):
        super().__init__(message, where)
        self.residual = residual


class NumericalError(GVMarketError, ArithmeticError):
    """A numerical routine failed (non-finite values, failed factorisation)."""


class QuadratureWarning(RuntimeWarning):
    """Adaptive quadrature hit its panel budget before meeting tolerances."""
