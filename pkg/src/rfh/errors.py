"""Exception hierarchy shared by all modules."""


class RFHError(Exception):
    """Base class for every error raised by the package."""


class DimensionMismatch(RFHError, ValueError):
    pass


class ZeroEigenvalue(RFHError, ValueError):
    pass


class QuadratureUnderresolved(RFHError, ValueError):
    pass


class NoZeroCrossing(RFHError):
    pass


class MultipleCrossings(RFHError):
    pass


class NotACircle(RFHError, ValueError):
    pass


class NewtonStagnation(RFHError):
    pass


class WindowEmpty(RFHError):
    pass


class PersistentDegeneracy(RFHError):
    pass


class DegenerateHessian(RFHError):
    pass


class BlowUp(RFHError):
    pass


class IndexGapInvalid(RFHError, ValueError):
    pass


class IndexMismatch(RFHError, ValueError):
    pass


class NoConvergence(RFHError):
    pass


class BoundarySquareNonzero(RFHError):
    pass


class UnboundedDifference(RFHError):
    pass


class ChainMapViolation(RFHError):
    pass


class NonConvergence(RFHError):
    pass


class MissingArtifact(RFHError):
    pass


class ConfigError(RFHError):
    """Raised for unreadable or invalid run configurations."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ParseError(ConfigError):
    pass


class ValidationError(ConfigError):
    pass
