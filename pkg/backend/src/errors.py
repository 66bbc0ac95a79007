"""
Exception hierarchy shared by the pipeline, the CLI and the HTTP service
"""
from typing import Optional


class AggregationError(Exception):
    """Base class for every error raised by the incident aggregation stack"""

    error_code = "AGGREGATION_ERROR"


class ParseError(AggregationError):
    """A line of an artifact or config file could not be parsed"""

    error_code = "PARSE_ERROR"

    def __init__(self, path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        self.message = message
        super().__init__(f"{self.path}:{line_no}: {message}")


class DataValidationError(AggregationError, ValueError):
    """Input data violates an invariant of the domain model"""

    error_code = "VALIDATION_ERROR"


class UnsortedStreamError(DataValidationError):
    """Incident stream is not sorted by minute"""

    error_code = "UNSORTED_STREAM"


class UnknownNodeError(AggregationError, KeyError):
    """Node id is not part of the topology"""

    error_code = "UNKNOWN_NODE"

    def __init__(self, node: str):
        self.node = node
        super().__init__(f"unknown node: {node!r}")

    def __str__(self) -> str:
        return self.args[0]


class UnknownIncidentTypeError(AggregationError, KeyError):
    """Incident type is not part of the embedding vocabulary"""

    error_code = "UNKNOWN_INCIDENT_TYPE"

    def __init__(self, itype: str):
        self.itype = itype
        super().__init__(f"unknown incident type: {itype!r}")

    def __str__(self) -> str:
        return self.args[0]


class DetectorStateError(AggregationError):
    """Detector used before calibration"""

    error_code = "DETECTOR_STATE"


class ConfigError(AggregationError):
    """Configuration file or values are invalid"""

    error_code = "CONFIG_ERROR"


class StageError(AggregationError):
    """A pipeline stage failed; wraps the original cause"""

    error_code = "STAGE_ERROR"

    def __init__(self, stage: str, cause: Optional[BaseException] = None):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
