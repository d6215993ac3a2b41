"""Exception hierarchy shared by all posefields modules.

Parsers and codecs never let raw ValueError/KeyError escape; anything a
caller should be able to catch is a PoseFieldsError subclass.
"""


class PoseFieldsError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(PoseFieldsError):
    """A skeleton schema violates its invariants."""


class ParseError(PoseFieldsError):
    """An input document is malformed.

    ``offset`` (byte offset) and ``line`` (1-based) are set when known.
    """

    def __init__(self, message, offset=None, line=None):
        super().__init__(message)
        self.offset = offset
        self.line = line


class GeometryError(PoseFieldsError):
    """A polyline or keypoint set is unusable (e.g. degenerate lane)."""


class FieldShapeError(PoseFieldsError):
    """Field arrays do not match the schema or each other."""


class EvaluationError(PoseFieldsError):
    """Evaluation inputs are inconsistent (canvas mismatch, zero-area box)."""


class SchedulingError(PoseFieldsError):
    """A task specification cannot produce a valid epoch plan."""
