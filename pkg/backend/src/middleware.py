"""
Middleware for error handling and logging
"""
import logging
import time

from fastapi import HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .errors import (
    AggregationError,
    ConfigError,
    DataValidationError,
    DetectorStateError,
    ParseError,
    UnknownIncidentTypeError,
    UnknownNodeError,
)
from .log import configure_logging

configure_logging()

logger = logging.getLogger(__name__)


def _error_id() -> str:
    return f"ERR_{int(time.time())}"


class RequestLoggingMiddleware:
    """Middleware for logging HTTP requests and responses"""

    def __init__(self, app):
        self.app = app

    async def __call__(self, scope, receive, send):
        if scope["type"] != "http":
            await self.app(scope, receive, send)
            return

        start_time = time.time()
        method = scope["method"]
        path = scope["path"]
        query_string = scope["query_string"].decode()
        client = scope.get("client") or ("unknown", 0)
        if query_string:
            path = f"{path}?{query_string}"

        logger.info("Request: %s %s from %s:%s", method, path, client[0], client[1])

        await self.app(scope, receive, send)

        logger.info("Handled %s %s in %.2fs", method, path, time.time() - start_time)
def error_response(status_code: int, detail, error_code: str, **extra) -> JSONResponse:
    """JSON error body shared by every handler; 500s carry an error id for the logs"""
    content = {"detail": detail, "error_code": error_code, **extra}
    if status_code >= 500:
        content["error_id"] = _error_id()
    return JSONResponse(status_code=status_code, content=content)


class ErrorHandlingMiddleware:
    """Last-resort handler for errors raised outside the routers"""

    def __init__(self, app):
        self.app = app

    async def __call__(self, scope, receive, send):
        if scope["type"] != "http":
            await self.app(scope, receive, send)
            return

        try:
            await self.app(scope, receive, send)
        except Exception:
            logger.exception("Unhandled error on %s %s", scope["method"], scope["path"])
            await error_response(500, "Internal server error", "INTERNAL_ERROR")(scope, receive, send)


def status_for(exc: AggregationError) -> int:
    """HTTP status for an aggregation error"""
    if isinstance(exc, (UnknownNodeError, UnknownIncidentTypeError)):
        return 404
    if isinstance(exc, DetectorStateError):
        return 409
    if isinstance(exc, (DataValidationError, ParseError, ConfigError)):
        return 422
    return 500


async def aggregation_exception_handler(request: Request, exc: AggregationError):
    """Translate domain errors into JSON responses"""
    status_code = status_for(exc)
    if status_code >= 500:
        logger.error("Aggregation error: %s - %s %s", exc, request.method, request.url)
    else:
        logger.warning("HTTP %d: %s - %s %s", status_code, exc, request.method, request.url)
    return error_response(status_code, str(exc), exc.error_code)


async def http_exception_handler(request: Request, exc: HTTPException):
    logger.warning("HTTP %d: %s - %s %s", exc.status_code, exc.detail, request.method, request.url)
    return error_response(exc.status_code, exc.detail, f"HTTP_{exc.status_code}")


async def validation_exception_handler(request: Request, exc: RequestValidationError):
    logger.warning("Validation error: %s - %s %s", exc, request.method, request.url)
    return error_response(422, "Validation error", "VALIDATION_ERROR", errors=str(exc))


async def general_exception_handler(request: Request, exc: Exception):
    logger.exception("General exception: %s - %s %s", exc, request.method, request.url)
    return error_response(500, "An unexpected error occurred", "INTERNAL_ERROR")


def setup_middleware(app):
    """Setup all middleware for the FastAPI app"""
    app.add_middleware(RequestLoggingMiddleware)
    app.add_middleware(ErrorHandlingMiddleware)

    app.add_exception_handler(AggregationError, aggregation_exception_handler)
    app.add_exception_handler(HTTPException, http_exception_handler)
    app.add_exception_handler(RequestValidationError, validation_exception_handler)
    app.add_exception_handler(Exception, general_exception_handler)

    logger.info("Middleware setup complete")
