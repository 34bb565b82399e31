"""Exception and warning types shared across the package."""


class PoseAlignError(Exception):
    """Base class for all package-specific errors."""


class NonOrthonormalInput(PoseAlignError):
    """Rotation-matrix input is not orthonormal or not right-handed."""


class DegenerateProjection(PoseAlignError):
    """Weak-perspective projection collapsed to (near) zero extent."""


class DegenerateInput(PoseAlignError):
    """Input landmarks are rank-deficient (e.g. all collinear)."""


class EmptyIntersection(PoseAlignError):
    """Bounding box does not overlap the image at all."""


class ShapeMismatch(PoseAlignError):
    """Operand dimensions disagree (landmark count, tensor shapes)."""


class NonFiniteLoss(PoseAlignError):
    """Training loss became NaN/inf; carries the offending epoch and batch."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class NonFiniteUpdate(PoseAlignError):
    """A regressor update became NaN/inf."""


class ParseError(PoseAlignError):
    """Malformed data file; carries the offending 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CountMismatch(ParseError):
    """Declared and actual record counts differ."""


class ZeroNormalizer(PoseAlignError):
    """Error normalizer (inter-ocular distance) is zero."""


class ModelIOError(PoseAlignError):
    """Model container is malformed or incompatible with this build."""


class GimbalLockWarning(UserWarning):
    """Yaw is at +/-90 degrees; roll is reported as zero by convention."""
