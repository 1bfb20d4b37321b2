"""Exception types shared across the package."""


class SplatSlamError(Exception):
    """Base class for all package-specific errors."""


class InvalidDepth(SplatSlamError):
    """Depth value is non-positive or non-finite."""


class BehindCamera(SplatSlamError):
    """Point has z <= 0 in the camera frame and cannot be projected."""


class InsufficientCorrespondences(SplatSlamError):
    """Fewer than the minimum number of point correspondences survived."""


class DegenerateGeometry(SplatSlamError):
    """Point configuration does not constrain a unique rigid transform."""


class EmptyMatchSet(SplatSlamError):
    """An operation that requires at least one match received none."""


class EmptyPointSet(SplatSlamError):
    """An operation that requires a non-empty point set received none."""


class EmptyKeyframeSet(SplatSlamError):
    """An operation that requires at least one keyframe received none."""


class ShapeError(SplatSlamError):
    """Array shapes do not match the operation's contract."""


class WindowError(SplatSlamError):
    """Image is smaller than the filter window."""


class InsufficientOverlap(SplatSlamError):
    """Too few timestamp associations between two trajectories."""


class DatasetError(SplatSlamError):
    """Dataset directory or file is missing, malformed, or empty."""
