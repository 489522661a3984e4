"""
Logging configuration for the grid simulator.

This module sets up:
- File rotation (prevents disk space issues on long runs)
- Structured logging (JSON lines for log aggregation tools)
- Separate handlers for console and file output
- Simulation context on each record (iteration, feedback round, microgrid)
"""

import functools
import json
import logging
import logging.handlers
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Tuple, Type

ROOT_LOGGER = "gridsim"

# Extra fields copied onto JSON records when a call site provides them
CONTEXT_FIELDS = ("iteration", "round", "microgrid", "duration_ms", "command")


class JSONFormatter(logging.Formatter):
    """Formatter that renders each record as one JSON object per line."""

    def format(self, record: logging.LogRecord) -> str:
        """Format log record as JSON."""
        log_data: Dict[str, Any] = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
            "message": record.getMessage(),
        }

        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)

        for name in CONTEXT_FIELDS:
            if hasattr(record, name):
                log_data[name] = getattr(record, name)

        return json.dumps(log_data, default=str)


def setup_logging(
    log_level: str = "INFO",
    log_dir: str = "logs",
    enable_console: bool = True,
    enable_file: bool = True,
    json_format: bool = False,
) -> logging.Logger:
    """
    Configure application-wide logging.

    Args:
        log_level: Minimum log level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_dir: Directory for log files (created if it doesn't exist)
        enable_console: Whether to log to the console (stderr, stdout carries reports)
        enable_file: Whether to log to rotating files
        json_format: Use JSON lines for file logs

    Returns:
        Configured ``gridsim`` logger

    Example:
        >>> logger = setup_logging(log_level="DEBUG", json_format=True)
        >>> logger.info("Simulation started")
    """
    logger = logging.getLogger(ROOT_LOGGER)
    logger.setLevel(getattr(logging, log_level.upper()))

    # Remove existing handlers (prevent duplicate logs)
    logger.handlers.clear()

    if enable_console:
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(logging.WARNING)
        console_format = logging.Formatter(
            "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )
        console_handler.setFormatter(console_format)
        logger.addHandler(console_handler)

    if enable_file:
        Path(log_dir).mkdir(parents=True, exist_ok=True)

        # Main log rotates at 10MB, keeps 5 backups
        file_handler = logging.handlers.RotatingFileHandler(
            filename=f"{log_dir}/gridsim.log",
            maxBytes=10 * 1024 * 1024,
            backupCount=5,
            encoding="utf-8",
        )
        file_handler.setLevel(logging.DEBUG)

        format_str = (
            "%(asctime)s - %(name)s - %(levelname)s - "
            "%(module)s:%(funcName)s:%(lineno)d - %(message)s"
        )
        file_format = logging.Formatter(format_str, datefmt="%Y-%m-%d %H:%M:%S")
        file_handler.setFormatter(JSONFormatter() if json_format else file_format)
        logger.addHandler(file_handler)

        error_handler = logging.handlers.RotatingFileHandler(
            filename=f"{log_dir}/error.log",
            maxBytes=10 * 1024 * 1024,
            backupCount=5,
            encoding="utf-8",
        )
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(JSONFormatter() if json_format else file_format)
        logger.addHandler(error_handler)

    logger.info(
        f"Logging configured: level={log_level}, console={enable_console}, "
        f"file={enable_file}, json={json_format}"
    )

    return logger


def get_logger(name: str) -> logging.Logger:
    """
    Get a logger for a module of the simulator.

    Example:
        >>> logger = get_logger(__name__)
        >>> logger.info("Routing microgrid bids")
    """
    return logging.getLogger(f"{ROOT_LOGGER}.{name}")


def log_performance(
    logger: logging.Logger,
    level: int = logging.DEBUG,
    expected: Tuple[Type[BaseException], ...] = (),
):
    """
    Decorator logging the execution time of a function.

    Solver entry points run thousands of times per simulation, so timing goes
    to DEBUG unless a level is given. Exceptions listed in ``expected`` are
    outcomes the caller handles: they are logged at ``level`` without a
    traceback. Any other exception is logged at ERROR. Both are re-raised.

    Example:
        >>> @log_performance(get_logger(__name__), expected=(GridSimError,))
        ... def incremental_reroute(graph, flow, changes):
        ...     ...
    """

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except expected as e:
                duration_ms = (time.perf_counter() - start_time) * 1000
                logger.log(
                    level,
                    f"{func.__name__} gave up: {e}",
                    extra={"duration_ms": round(duration_ms, 3)},
                )
                raise
            except Exception as e:
                duration_ms = (time.perf_counter() - start_time) * 1000
                logger.error(
                    f"{func.__name__} failed: {e}",
                    extra={"duration_ms": duration_ms},
                    exc_info=True,
                )
                raise
            if logger.isEnabledFor(level):
                duration_ms = (time.perf_counter() - start_time) * 1000
                logger.log(
                    level,
                    f"{func.__name__} completed",
                    extra={"duration_ms": round(duration_ms, 3)},
                )
            return result

        return wrapper

    return decorator


class LogContext:
    """
    Context manager logging the start and end of an operation block.

    Example:
        >>> with LogContext(logger, "Iteration", iteration=3):
        ...     state = service.run_iteration(state)
    """

    def __init__(
        self,
        logger: logging.Logger,
        operation: str,
        level: int = logging.INFO,
        **kwargs,
    ):
        self.logger = logger
        self.operation = operation
        self.level = level
        self.context = kwargs
        self.start_time = 0.0

    def __enter__(self):
        self.start_time = time.perf_counter()
        self.logger.log(self.level, f"Starting: {self.operation}", extra=self.context)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        duration_ms = round((time.perf_counter() - self.start_time) * 1000, 3)

        if exc_type is None:
            self.logger.log(
                self.level,
                f"Completed: {self.operation}",
                extra={**self.context, "duration_ms": duration_ms},
            )
        else:
            self.logger.error(
                f"Failed: {self.operation} - {exc_val}",
                extra={**self.context, "duration_ms": duration_ms},
                exc_info=True,
            )

        return False  # Don't suppress exceptions
