"""
Error handling utilities module

This module contains the exception hierarchy of the toolkit and helpers
for handling errors consistently across services.
"""
import logging
import traceback
import functools

from pydantic import ValidationError

# Set up logging
logger = logging.getLogger(__name__)


class SpinekitError(Exception):
    """Base class for all errors raised by the toolkit."""
    pass


class VolumeError(SpinekitError):
    """Exception raised for invalid volume geometry or mismatched grids."""
    pass


class VolumeIOError(SpinekitError):
    """Exception raised when a NIfTI file cannot be read or written."""
    pass


class LabelError(SpinekitError):
    """Exception raised for label codes or instance ids outside the scheme."""
    pass


class PhantomSpecError(SpinekitError):
    """Exception raised when a phantom geometry cannot be realised."""
    pass


class ConfigError(SpinekitError):
    """Exception raised for unreadable or invalid configuration input."""
    pass


class PipelineError(SpinekitError):
    """Exception raised when a pipeline stage fails."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class PredictorError(SpinekitError):
    """Exception raised when a predictor fails or returns malformed output."""

    def __init__(self, message, command=None, returncode=None, stderr=None):
        details = [message]
        if command is not None:
            details.append(f"command: {command}")
        if returncode is not None:
            details.append(f"exit status: {returncode}")
        if stderr:
            details.append(f"stderr: {stderr.strip()}")
        super().__init__("\n".join(details))
        self.command = command
        self.returncode = returncode
        self.stderr = stderr


def handle_exceptions(func):
    """
    Decorator to log exceptions raised by service functions.

    Args:
        func: The function to wrap

    Returns:
        The wrapped function
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except Exception as e:
            logger.error(f"Error in {func.__name__}: {str(e)}")
            logger.debug(traceback.format_exc())
            raise

    return wrapper


def load_json_model(path, model_cls):
    """
    Parse a JSON file into a pydantic model.

    Args:
        path: Path of the JSON document
        model_cls: The pydantic model class to validate against

    Returns:
        An instance of model_cls

    Raises:
        ConfigError: If the file cannot be read or does not validate
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e

    try:
        return model_cls.model_validate_json(raw)
    except ValidationError as e:
        raise ConfigError(f"Invalid {model_cls.__name__} in {path}: {e}") from e
