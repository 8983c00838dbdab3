class GroundingError(Exception):
    """Base class for all pipeline errors.

    ``tag`` is the short category recorded on a failed GroundingResult.
    """

    tag = "pipeline"


class ValidationError(GroundingError, ValueError):
    tag = "validation"


class PlyError(GroundingError, ValueError):
    tag = "parse"


class GeometryError(GroundingError, ValueError):
    tag = "geometry"


class EmptySceneError(GroundingError):
    tag = "empty_scene"


class ResolutionError(GroundingError):
    tag = "resolution"


class ResponseParseError(GroundingError):
    tag = "parse"

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class ExtractionError(GroundingError):
    tag = "extraction"

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class TransportError(GroundingError):
    tag = "transport"

    def __init__(self, message: str, status: int | None = None, body: str = ""):
        super().__init__(message)
        self.status = status
        self.body = body


class AuthError(TransportError):
    tag = "auth"


class UnknownObjectError(GroundingError):
    tag = "unknown_id"


class EvaluationError(GroundingError):
    tag = "evaluation"
