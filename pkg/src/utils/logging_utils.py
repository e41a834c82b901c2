"""
Logging utilities module

This module sets up logging for command-line runs.
"""
import logging
import os
import sys
from datetime import datetime


def setup_logging(log_level=logging.INFO, log_dir="logs"):
    """
    Set up logging for a toolkit run.

    Args:
        log_level: The logging level to use (default: INFO)
        log_dir: Directory receiving the timestamped log file

    Returns:
        logging.Logger: The logger of this module
    """
    if isinstance(log_level, str):
        log_level = logging.getLevelName(log_level.upper())

    # Create logs directory if it doesn't exist
    if not os.path.exists(log_dir):
        os.makedirs(log_dir)

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    log_file = os.path.join(log_dir, f"spinekit_{timestamp}.log")

    # force=True so repeated CLI invocations in one process rebind handlers
    logging.basicConfig(
        level=log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stdout)
        ],
        force=True
    )

    logging.info(f"spinekit logging to {log_file}")

    return logging.getLogger(__name__)


def progress_enabled():
    """Progress bars are shown only when INFO messages would be shown."""
    return logging.getLogger().isEnabledFor(logging.INFO)
