"""Exception types raised across the package.

Every error derives from :class:`SignPoseError`, which the CLI maps to the
"data error" exit status.
"""


class SignPoseError(Exception):
    """Base class for all package errors."""


class DegenerateConfiguration(SignPoseError):
    """Point correspondences do not determine a transform (collinear/coincident)."""


class PointAtInfinity(SignPoseError):
    """A projective transform sent a point to infinity."""


class DegenerateBaseline(SignPoseError):
    """Two camera centers coincide, so triangulation is undetermined."""


class NoFiniteSolution(SignPoseError):
    """Triangulation produced a point at infinity."""


class BehindCamera(SignPoseError):
    pass


class NoTemplate(SignPoseError):
    pass


class InvalidSpec(SignPoseError):
    pass


class InconsistentShapes(SignPoseError):
    pass


class MisalignedGrid(SignPoseError):
    pass


class OutOfPatch(SignPoseError):
    pass


class NoLargeSign(SignPoseError):
    pass


class RegenerationExhausted(SignPoseError):
    pass


class InvalidWindow(SignPoseError):
    pass


class PlacementExhausted(SignPoseError):
    pass


class SchemaError(SignPoseError):
    """An input document does not follow the expected file format."""
