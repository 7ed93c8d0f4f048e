"""Exception types raised across the package."""


class BranchLabError(Exception):
    """Base class for every error raised by branchlab."""


# offspring laws
class OffspringError(BranchLabError, ValueError):
    pass


class NonNormalizable(OffspringError):
    pass


class DegenerateLinear(OffspringError):
    pass


class SubcriticalMean(OffspringError):
    pass


class DomainError(BranchLabError, ValueError):
    pass


# grids and fields
class NegativeTime(BranchLabError, ValueError):
    pass


class ZeroTime(BranchLabError, ValueError):
    pass


class GridMismatch(BranchLabError, ValueError):
    pass


class RangeViolation(BranchLabError, ArithmeticError):
    pass


class LogDomain(BranchLabError, ArithmeticError):
    pass


class KillPresent(BranchLabError, ValueError):
    pass


class BoxMarginViolated(BranchLabError, ValueError):
    pass


class NotConverged(BranchLabError, RuntimeError):
    pass


# particles
class HorizonTooLong(BranchLabError, ValueError):
    pass


class RangeError(BranchLabError, ValueError):
    pass


# scalar oracles
class RangeEscape(BranchLabError, ArithmeticError):
    pass


class SingularDenominator(BranchLabError, ZeroDivisionError):
    pass


class AlphaTooLarge(BranchLabError, ValueError):
    pass


class ConfigError(BranchLabError, ValueError):
    """Malformed run configuration (CLI exit code 2)."""
