"""
Unit tests for the HTTP error mapping
"""
import json

import pytest

from src.errors import (
    AggregationError,
    ConfigError,
    DetectorStateError,
    ParseError,
    StageError,
    UnknownIncidentTypeError,
    UnknownNodeError,
    UnsortedStreamError,
)
from src.middleware import error_response, status_for

pytestmark = pytest.mark.unit


class TestStatusFor:
    """Test cases for the domain error to status mapping"""

    @pytest.mark.parametrize("exc, status", [
        (UnknownNodeError("zz"), 404),
        (UnknownIncidentTypeError("t9"), 404),
        (DetectorStateError("not calibrated"), 409),
        (UnsortedStreamError("minute 3 after 5"), 422),
        (ParseError("groups.txt", 2, "expected 5 fields"), 422),
        (ConfigError("unknown config key"), 422),
        (StageError("train", ValueError("empty corpus")), 500),
        (AggregationError("boom"), 500),
    ])
    def test_status(self, exc, status):
        """Test the status of each error class"""
        assert status_for(exc) == status


class TestErrorResponse:
    """Test cases for the JSON error body"""

    def test_client_error_body(self):
        """Test that 4xx bodies carry detail and code only"""
        response = error_response(404, "unknown node: 'zz'", "UNKNOWN_NODE")

        assert response.status_code == 404
        assert json.loads(response.body) == {"detail": "unknown node: 'zz'", "error_code": "UNKNOWN_NODE"}

    def test_server_error_has_id(self):
        """Test that 5xx bodies carry an error id"""
        body = json.loads(error_response(500, "Internal server error", "INTERNAL_ERROR").body)

        assert body["error_id"].startswith("ERR_")

    def test_extra_fields(self):
        """Test that extra fields are passed through"""
        body = json.loads(error_response(422, "Validation error", "VALIDATION_ERROR", errors="bad").body)

        assert body["errors"] == "bad"
