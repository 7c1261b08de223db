"""
Structured logging configuration for the viloc localization pipeline

Provides centralized logging for:
- Scene simulation and calibration
- Windowing and dataset persistence
- GAN training, self-training and experiment harnesses

Usage:
    from logger import get_logger

    logger = get_logger(__name__)
    logger.info("Scene generated", scene_id="scene1", pedestrians=3)
    logger.error("Calibration failed", error=str(e), scene_id="scene1")
"""

import json
import logging
import os
import sys
from datetime import datetime, timezone
from typing import Any, Dict, Optional

# Keyword arguments that belong to logging itself rather than the record
LOGGING_KWARGS = ("exc_info", "stack_info", "stacklevel", "extra")


class StructuredFormatter(logging.Formatter):
    """
    Custom formatter for structured JSON logging

    Outputs one JSON object per line:
    {
        "timestamp": "2026-10-18T10:30:00.000000Z",
        "level": "INFO",
        "logger": "src.gan",
        "message": "Epoch finished",
        "epoch": 12,
        "l_reg": 3.41
    }
    """

    def format(self, record: logging.LogRecord) -> str:
        log_data: Dict[str, Any] = {
            "timestamp": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ"),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }

        if hasattr(record, "extra_fields"):
            log_data.update(record.extra_fields)

        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        # numpy scalars and paths are not JSON native
        return json.dumps(log_data, default=str)


class ExtraFieldsAdapter(logging.LoggerAdapter):
    """
    Adapter to support extra fields in log messages

    Allows passing additional context as keyword arguments:
    logger.info("Windowed pedestrian", ped="p0", labeled=512, skipped=3)
    """

    def process(self, msg: str, kwargs: Dict[str, Any]) -> tuple[str, Dict[str, Any]]:
        fields = {key: kwargs.pop(key) for key in list(kwargs) if key not in LOGGING_KWARGS}
        kwargs.setdefault("extra", {})["extra_fields"] = fields
        return msg, kwargs


# ==================== Logger Configuration ====================

_configured: set[str] = set()


def get_logger(name: str, level: Optional[str] = None) -> logging.LoggerAdapter:
    """
    Get configured logger instance with structured logging

    Args:
        name: Logger name (typically __name__ from calling module)
        level: Optional log level override (DEBUG, INFO, WARNING, ERROR).
               Defaults to the LOG_LEVEL environment variable, then INFO.

    Returns:
        Logger adapter with extra fields support
    """
    logger = logging.getLogger(name)

    if level:
        logger.setLevel(getattr(logging, level.upper()))
    else:
        log_level = os.getenv("LOG_LEVEL", "INFO").upper()
        logger.setLevel(getattr(logging, log_level, logging.INFO))

    # Remove existing handlers to avoid duplicates
    logger.handlers.clear()

    # stdout is reserved for command output
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(StructuredFormatter())

    logger.addHandler(handler)
    logger.propagate = False
    _configured.add(name)

    return ExtraFieldsAdapter(logger, {})


# ==================== Log Level Utilities ====================

def set_log_level(level: str):
    """
    Set log level for every logger created through get_logger

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)

    Example:
        set_log_level("DEBUG")  # per-batch training losses become visible
    """
    numeric = getattr(logging, level.upper())
    logging.getLogger().setLevel(numeric)
    for name in _configured:
        logging.getLogger(name).setLevel(numeric)
