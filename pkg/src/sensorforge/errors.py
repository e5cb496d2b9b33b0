"""Exception types shared across modules."""


class SensorforgeError(Exception):
    """Base class for all platform errors."""


class SourceUnavailable(SensorforgeError):
    """Capture device missing or replay directory empty."""


class DecodeError(SensorforgeError):
    """Image bytes could not be decoded as PNG/JPEG."""


class EmptyWindow(SensorforgeError):
    """Frame window snapshot requested before any frame arrived."""


class BackendTimeout(SensorforgeError):
    """A remote model call exceeded its deadline."""


class BackendError(SensorforgeError):
    def __init__(self, status: int, body: str):
        super().__init__(f"backend returned status {status}")
        self.status = status
        self.body = body


class FixtureMissing(SensorforgeError):
    """Scripted backend has no fixture for this request fingerprint."""


class ParseFailure(SensorforgeError):
    """Model output was not valid structured JSON for its schema."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class EmptyResults(SensorforgeError):
    """Verdict aggregation called with no results."""


class FrameMissing(SensorforgeError):
    """A referenced frame_id is absent from the frame store."""


class DanglingFrame(SensorforgeError):
    """A run references a frame not present in the frame store."""


class DuplicateRun(SensorforgeError):
    """A run_id was recorded twice."""


class UnknownSensor(SensorforgeError):
    pass


class UnknownCriterion(SensorforgeError):
    pass


class ConfigError(SensorforgeError):
    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field_path = field_path
