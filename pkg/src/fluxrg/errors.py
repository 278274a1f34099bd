"""Exception types raised by the verification toolkit."""


class CheckError(Exception):
    """Base class for failed structural checks."""


class AntisymmetryViolation(CheckError):
    pass


class FluxMismatch(CheckError):
    pass


class DimensionMismatch(CheckError, ValueError):
    pass


class BoundViolation(CheckError):
    pass


class TooLarge(CheckError, ValueError):
    pass


class NonHermitian(CheckError):
    pass


class InconsistentTransform(CheckError):
    pass


class IdentityViolation(CheckError):
    pass


class DegreeOverflow(CheckError):
    pass


class BranchCut(CheckError, ValueError):
    pass


class NonPositiveRealPart(CheckError):
    pass


class Unsupported(CheckError, ValueError):
    pass


class InvalidScale(CheckError, ValueError):
    pass


class SingularDenominator(CheckError):
    pass


class ScaleOutOfRange(CheckError, ValueError):
    pass


class InverseBoundViolation(CheckError):
    pass


class NonQuadratic(CheckError, ValueError):
    pass


class InvarianceViolation(CheckError):
    pass


class MarginViolation(CheckError, ValueError):
    pass
