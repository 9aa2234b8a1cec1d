"""
Custom exception classes and error handling utilities.
Provides standardized error envelopes and process exit codes for the CLI.
"""
import logging
import sys
from typing import Optional, Dict, Any

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4
EXIT_RACE_ABORT = 5


class AppError(Exception):
    """Base exception for all application errors."""

    def __init__(self, message: str, code: str = "APP_ERROR", details: Optional[Dict] = None, exit_code: int = 1):
        self.message = message
        self.code = code
        self.details = details or {}
        self.exit_code = exit_code
        super().__init__(self.message)

    def to_dict(self) -> Dict[str, Any]:
        """Convert exception to dictionary for JSON output."""
        return {
            "success": False,
            "error": {
                "message": self.message,
                "code": self.code,
                "details": self.details
            }
        }


class ConfigurationError(AppError):
    """Configuration error."""

    def __init__(self, message: str, details: Optional[Dict] = None, code: str = "CONFIGURATION_ERROR"):
        super().__init__(message, code, details, EXIT_CONFIG)


class ValidationError(ConfigurationError):
    """Run-configuration validation error naming the offending JSON path."""

    def __init__(self, message: str, field: Optional[str] = None, details: Optional[Dict] = None):
        error_details = details or {}
        if field:
            error_details['field'] = field
        super().__init__(message, error_details, "VALIDATION_ERROR")


class DataError(AppError):
    """Dataset, telemetry or track data error."""

    def __init__(self, message: str, file_path: Optional[str] = None, details: Optional[Dict] = None,
                 code: str = "DATA_ERROR"):
        error_details = details or {}
        if file_path:
            error_details['file_path'] = str(file_path)
        super().__init__(message, code, error_details, EXIT_DATA)


class SchemaError(DataError):
    """Telemetry file does not match the documented column schema."""

    def __init__(self, message: str, file_path: Optional[str] = None, details: Optional[Dict] = None):
        super().__init__(message, file_path, details, "SCHEMA_ERROR")


class NaNFieldError(DataError):
    """A telemetry row holds a missing or non-finite value."""

    def __init__(self, row: int, column: str, file_path: Optional[str] = None):
        self.row = row
        self.column = column
        super().__init__(
            f"Non-finite value in column '{column}' at row {row}",
            file_path,
            {'row': row, 'column': column},
            "NAN_FIELD",
        )


class TimestampError(DataError):
    """Timestamps are not strictly increasing or not evenly spaced within a session."""

    def __init__(self, message: str, row: Optional[int] = None, file_path: Optional[str] = None):
        details = {'row': row} if row is not None else {}
        super().__init__(message, file_path, details, "TIMESTAMP_ERROR")


class WindowingError(DataError):
    """Not enough consecutive samples to build the requested windows."""

    def __init__(self, message: str, details: Optional[Dict] = None):
        super().__init__(message, None, details, "WINDOWING_ERROR")


class TrackError(DataError):
    """Degenerate track or raceline definition."""

    def __init__(self, message: str, details: Optional[Dict] = None):
        super().__init__(message, None, details, "TRACK_ERROR")


class DimensionError(AppError):
    """Array shapes that do not chain."""

    def __init__(self, message: str, expected: Any = None, actual: Any = None):
        details = {}
        if expected is not None:
            details['expected'] = str(expected)
        if actual is not None:
            details['actual'] = str(actual)
        super().__init__(message, "DIMENSION_ERROR", details, EXIT_DATA)


class SimulationError(AppError):
    """The vehicle model was driven outside its valid domain."""

    def __init__(self, message: str, details: Optional[Dict] = None, code: str = "SIMULATION_ERROR"):
        super().__init__(message, code, details, EXIT_DATA)


class SlipAngleDomainError(SimulationError):
    """Slip angles requested at a longitudinal velocity at or below the floor."""

    def __init__(self, v_x: float, floor: float):
        self.v_x = v_x
        super().__init__(
            f"Slip angles undefined for v_x={v_x:.6g} m/s (floor {floor:g} m/s)",
            {'v_x': float(v_x), 'floor': floor},
            "SLIP_ANGLE_DOMAIN",
        )


class TrackExitError(SimulationError):
    """Data generation drove the vehicle off the track."""

    def __init__(self, step: int, offset: float, half_width: float):
        super().__init__(
            f"Vehicle left the track at step {step}: offset {offset:.4f} m > half width {half_width:.4f} m",
            {'step': step, 'offset': offset, 'half_width': half_width},
            "TRACK_EXIT",
        )


class TrainingDivergenceError(AppError):
    """Training produced a non-finite loss or gradient; carries the last finite checkpoint."""

    def __init__(self, message: str, epoch: int, checkpoint: Any = None, report: Any = None):
        self.epoch = epoch
        self.checkpoint = checkpoint
        self.report = report
        super().__init__(message, "TRAINING_DIVERGENCE", {'epoch': epoch}, EXIT_DIVERGENCE)


class RaceAbortError(AppError):
    """Closed-loop run terminated early; carries the partial race report."""

    def __init__(self, message: str, report: Any = None):
        self.report = report
        super().__init__(message, "RACE_ABORT", {}, EXIT_RACE_ABORT)


def error_message(error: AppError) -> str:
    """
    Render an error for the terminal, including the field or file it concerns.

    Args:
        error: Application error

    Returns:
        Single-line message
    """
    parts = [f"[{error.code}] {error.message}"]
    for key in ('field', 'file_path', 'row', 'column'):
        if key in error.details:
            parts.append(f"{key}={error.details[key]}")
    return " ".join(parts)


def success_response(data: Optional[Dict] = None, message: Optional[str] = None) -> Dict[str, Any]:
    """
    Create a standardized success envelope for a command's JSON output.

    Args:
        data: Response data merged into the envelope
        message: Optional success message
    """
    response: Dict[str, Any] = {
        "success": True
    }

    if message:
        response['message'] = message

    if data:
        response.update(data)

    return response


def register_error_handlers(cli) -> None:
    """
    Wrap the click group's invocation so any AppError leaving a command is
    logged and converted into its exit code.

    Args:
        cli: click Group instance
    """
    original_invoke = cli.invoke

    def invoke(ctx):
        try:
            return original_invoke(ctx)
        except AppError as error:
            logger.error(error_message(error))
            sys.exit(error.exit_code)

    cli.invoke = invoke
