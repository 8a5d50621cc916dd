"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class LookbackError(Exception):
    """Base class for every error raised by this package."""


class InvalidCap(LookbackError, ValueError):
    pass


class InvalidModel(LookbackError, ValueError):
    pass


class InvalidParameter(LookbackError, ValueError):
    pass


class DegenerateRoots(LookbackError, ValueError):
    """Two roots of psi(z) = q coincide to within the relative guard."""


class NonpositiveArgument(LookbackError, ValueError):
    pass


class RegimeMismatch(LookbackError, ValueError):
    """An operation was called outside the parameter regime it is defined for."""


class OutsideDomain(LookbackError, ValueError):
    pass


class OutsideU(LookbackError, ValueError):
    """Point (s, H) is not in U = {s > log K, H > 0}."""


class OutsideE(LookbackError, ValueError):
    """Point (x, s) violates x <= s."""


class BracketFailure(LookbackError, RuntimeError):
    pass


class StepFailure(LookbackError, RuntimeError):
    pass


class QuadratureFailure(LookbackError, RuntimeError):
    pass


class InfiniteValue(LookbackError, ArithmeticError):
    """The value function is identically +inf in this regime."""


class ConfigError(LookbackError, ValueError):
    pass
