"""Exception types raised across the dynba package."""


class DynbaError(Exception):
    """Base class for all dynba errors."""


class NearPiRotation(DynbaError):
    """Rotation angle too close to pi for a well-conditioned log map."""


class NonPositiveDisparity(DynbaError):
    """Back-projection requested with disparity <= 0."""


class InvalidPixel(DynbaError):
    """Reprojection at the requested pixel is invalid (behind camera or out of bounds)."""


class ShapeMismatch(DynbaError):
    """Grid shapes of an observation disagree with the keyframe state."""


class EmptyProblem(DynbaError):
    """Bundle adjustment problem contains no edges."""


class SingularSystem(DynbaError):
    """Normal equations are rank-deficient beyond what gauge fixing removes."""


class NonFiniteCost(DynbaError):
    """Optimization produced a non-finite cost; carries diagnostic state."""

    def __init__(self, message, iteration=None, last_cost=None):
        super().__init__(message)
        self.iteration = iteration
        self.last_cost = last_cost


class UnknownKeyframe(DynbaError):
    """Keyframe id not present in the frame graph."""


class DuplicateId(DynbaError):
    """Keyframe id is not strictly greater than all existing ids."""


class MissingGroundTruth(DynbaError):
    """Scene truth lacks the per-pixel displacement field needed by the oracle."""


class NonPositiveSigma(DynbaError):
    """Kernel width must be positive."""


class DegenerateGeometry(DynbaError):
    """Trajectory geometry too degenerate for similarity alignment."""


class LengthMismatch(DynbaError):
    """Paired sequences differ in length."""


class ParseError(DynbaError):
    """Malformed trajectory file line."""

    def __init__(self, message, line_number=None):
        super().__init__(message)
        self.line_number = line_number


class NonUnitQuaternion(DynbaError):
    """Quaternion norm too far from 1 to renormalize safely."""


class InvalidPattern(DynbaError):
    """Motion pattern parameters incomplete or inconsistent."""
