from typing import Optional, Dict, Any


class ExitCode:
    OK = 0
    CONFIGURATION = 1
    RUNTIME = 2


class AurlError(Exception):
    """Base error; `code` doubles as the CLI exit code class"""

    def __init__(
            self,
            message: str,
            code: int = ExitCode.RUNTIME,
            data: Optional[Dict[str, Any]] = None
    ):
        self.message = message
        self.code = code
        self.data = data or {}
        super().__init__(self.message)


class ConfigurationError(AurlError):
    """Invalid configuration values or files"""

    def __init__(self, message: str, data: Optional[Dict[str, Any]] = None):
        super().__init__(message, code=ExitCode.CONFIGURATION, data=data)


class SchemaMismatchError(AurlError):
    """Utterance, belief or token outside the schema"""
    pass


class DimensionMismatchError(AurlError):
    """Net input/gradient shape errors"""
    pass


class TrainingError(AurlError):
    """Non-finite values, empty batches, degenerate corpora"""
    pass


class BufferOverflowError(AurlError):
    """Push into a full replay buffer (a scheduling bug)"""
    pass


class MeasurementError(AurlError):
    """Difficulty measurement could not cover every action type"""
    pass


class CheckpointError(AurlError):
    """Missing or corrupt checkpoint files"""
    pass


class ReportError(AurlError):
    """Missing or malformed run artifacts"""
    pass


def handle_error(error: Exception) -> Dict[str, Any]:
    """Convert exceptions to structured error records"""
    if isinstance(error, AurlError):
        return {
            "type": type(error).__name__,
            "code": error.code,
            "message": str(error),
            "data": error.data
        }
    return {
        "type": type(error).__name__,
        "code": ExitCode.RUNTIME,
        "message": f"Internal error: {error}"
    }
