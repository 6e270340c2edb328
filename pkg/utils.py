"""
Utility Module for commscape

This module contains common utilities including the exception hierarchy,
validation results, configuration management, error handling and small
IO helpers shared by the graph, clustering and scoring modules.
"""

from typing import Any, Callable, Dict, IO, List, Optional, Sequence, TypeVar, Union
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
import gzip
import json
import logging
import os
import sys

import numpy as np


T = TypeVar("T")
R = TypeVar("R")


class CommscapeError(Exception):
    """Base class for every error raised by commscape."""


class ArgumentError(CommscapeError, ValueError):
    """A precondition on an argument was violated."""


class UsageError(CommscapeError):
    """A command-line flag or input is unusable."""

    def __init__(self, message: str, flag: Optional[str] = None):
        self.flag = flag
        super().__init__(f"{flag}: {message}" if flag else message)


class DataError(CommscapeError):
    """Input data is malformed or numerically unusable."""


class ParseError(DataError):
    """Malformed input text, carrying the offending line or cell location."""

    def __init__(self, message: str, line: Optional[int] = None, location: Optional[str] = None):
        self.line = line
        self.location = location if location is not None else (f"line {line}" if line is not None else None)
        prefix = f"{self.location}: " if self.location else ""
        super().__init__(f"{prefix}{message}")


class WalkCountOverflowError(DataError, ArithmeticError):
    """A walk count left the exactly representable float64 range."""


class UnknownNodeError(CommscapeError, KeyError):
    """A node id is not part of the graph."""

    def __init__(self, node: Any):
        self.node = node
        super().__init__(node)

    def __str__(self) -> str:
        return f"unknown node id: {self.node}"


class PruningBoundViolation(CommscapeError, AssertionError):
    """The interval pruning skipped a point whose winner changed."""


@dataclass
class ValidationResult:
    """Result of data validation operations."""
    is_valid: bool
    errors: List[str]
    warnings: List[str] = field(default_factory=list)

    @property
    def first_error(self) -> Optional[str]:
        return self.errors[0] if self.errors else None


def parallel_map(func: Callable[[T], R], items: Sequence[T], threads: int = 1) -> List[R]:
    """
    Apply func to every item, preserving input order.

    Work is split by the caller into fixed units, so the result never depends
    on the number of threads.
    """
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as executor:
        return list(executor.map(func, items))


def chunk_bounds(total: int, chunk_size: int) -> List[range]:
    """Split range(total) into consecutive ranges of at most chunk_size."""
    if chunk_size < 1:
        raise ArgumentError(f"chunk size must be >= 1, got {chunk_size}")
    return [range(start, min(start + chunk_size, total)) for start in range(0, total, chunk_size)]


def derive_seed(seed: int, *keys: int) -> int:
    """Derive an independent, reproducible integer seed from a base seed and keys."""
    sequence = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(k) & 0xFFFFFFFF for k in keys]])
    return int(sequence.generate_state(1)[0])


def open_binary(path: Union[str, Path]) -> IO[bytes]:
    """Open a file for binary reading, transparently decompressing .gz files."""
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and tuples into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Path):
        return value.as_posix()
    return value


def dumps_report(report: Dict[str, Any]) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(to_jsonable(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(report: Dict[str, Any], destination: Optional[Union[str, Path]]) -> None:
    """Write a machine report to a file, or to standard output for None / '-'."""
    text = dumps_report(report)
    if destination is None or str(destination) == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = Path(destination)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


class ConfigurationManager:
    """Manager for application configuration and environment variables."""

    CONFIG_DEFAULTS: Dict[str, Optional[str]] = {
        'APP_ENV': 'development',
        'LOG_LEVEL': None,
        'LOG_DIR': None,
        'COMMSCAPE_THREADS': None,
        'CSV_CHUNK_SIZE': '10000',
        'WALK_BLOCK_SIZE': '256',
        'ASSIGN_CHUNK_SIZE': '4096',
    }

    def __init__(self, load_env_file: bool = True):
        """Initialize configuration manager."""
        self.config: Dict[str, Optional[str]] = {}
        self._load_environment_config(load_env_file)

    def _load_environment_config(self, load_env_file: bool = True) -> Dict[str, Optional[str]]:
        """Load configuration from a .env file and environment variables."""
        if load_env_file:
            from dotenv import load_dotenv
            load_dotenv()

        for key, default_value in self.CONFIG_DEFAULTS.items():
            self.config[key] = os.getenv(key, default_value)

        return self.config

    def get_config_value(self, key: str, default: Any = None) -> Any:
        """Get configuration value by key."""
        value = self.config.get(key)
        return default if value is None else value

    def get_int_config(self, key: str, default: int = 0) -> int:
        """Get configuration value as integer."""
        value = self.config.get(key)
        if value is None:
            return default
        try:
            return int(value)
        except (ValueError, TypeError):
            return default

    def default_threads(self) -> int:
        """Thread cap from COMMSCAPE_THREADS, falling back to the CPU count."""
        threads = self.get_int_config('COMMSCAPE_THREADS', 0)
        if threads >= 1:
            return threads
        return os.cpu_count() or 1

    def walk_block_size(self) -> int:
        return max(1, self.get_int_config('WALK_BLOCK_SIZE', 256))

    def assign_chunk_size(self) -> int:
        return max(1, self.get_int_config('ASSIGN_CHUNK_SIZE', 4096))

    def csv_chunk_size(self) -> int:
        return max(1, self.get_int_config('CSV_CHUNK_SIZE', 10000))

    def environment(self) -> str:
        return str(self.get_config_value('APP_ENV', 'development')).lower()

    def validate_configuration(self) -> ValidationResult:
        """Validate all configuration settings."""
        errors = []
        warnings = []

        for key in ('CSV_CHUNK_SIZE', 'WALK_BLOCK_SIZE', 'ASSIGN_CHUNK_SIZE'):
            raw = self.config.get(key)
            try:
                if int(raw) <= 0:
                    errors.append(f"{key} must be a positive integer")
            except (ValueError, TypeError):
                errors.append(f"{key} must be a valid integer")

        threads = self.config.get('COMMSCAPE_THREADS')
        if threads is not None:
            try:
                if int(threads) < 1:
                    errors.append("COMMSCAPE_THREADS must be >= 1")
            except (ValueError, TypeError):
                errors.append("COMMSCAPE_THREADS must be a valid integer")

        level = self.config.get('LOG_LEVEL')
        if level is not None and level.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            errors.append(f"LOG_LEVEL '{level}' is not a logging level")

        valid_envs = {'development', 'production', 'test'}
        if self.environment() not in valid_envs:
            warnings.append(
                f"APP_ENV '{self.environment()}' is not a standard environment. "
                f"Valid options: {', '.join(sorted(valid_envs))}"
            )

        return ValidationResult(
            is_valid=len(errors) == 0,
            errors=errors,
            warnings=warnings
        )

    def get_safe_config_summary(self) -> Dict[str, str]:
        """Get configuration summary suitable for logging."""
        return {key: (value if value is not None else "Not set") for key, value in self.config.items()}


class ErrorHandler:
    """Maps errors to exit codes and user-facing messages."""

    EXIT_OK = 0
    EXIT_DATA_ERROR = 1
    EXIT_USAGE_ERROR = 2

    def __init__(self, config_manager: Optional[ConfigurationManager] = None):
        """Initialize error handler."""
        self.logger = logging.getLogger(__name__)
        self.config_manager = config_manager or ConfigurationManager(load_env_file=False)

    def exit_code_for(self, error: BaseException) -> int:
        """Exit code for an exception escaping a command."""
        if isinstance(error, (UsageError, ArgumentError)):
            return self.EXIT_USAGE_ERROR
        return self.EXIT_DATA_ERROR

    def describe(self, error: BaseException) -> str:
        """One-line message for the terminal."""
        if isinstance(error, UsageError):
            return f"usage error: {error}"
        if isinstance(error, ArgumentError):
            return f"invalid argument: {error}"
        if isinstance(error, ParseError):
            return f"parse error: {error}"
        if isinstance(error, UnknownNodeError):
            return f"lookup error: {error}"
        if isinstance(error, DataError):
            return f"data error: {error}"
        if isinstance(error, FileNotFoundError):
            return f"file not found: {error.filename}"
        if isinstance(error, OSError):
            return f"I/O error: {error}"
        return f"unexpected {type(error).__name__}: {error}"

    def log_error(self, error: BaseException, context: str) -> None:
        """
        Log error with debugging information.

        Args:
            error: The exception that occurred
            context: Where the error occurred (command, dataset name)
        """
        error_info = {
            'error_type': type(error).__name__,
            'error_message': str(error),
            'context': context,
        }
        if isinstance(error, CommscapeError) or isinstance(error, OSError):
            self.logger.error(f"Error in {context}: {error_info}")
        else:
            self.logger.exception(f"Unexpected error in {context}: {error_info}")

    def handle(self, error: BaseException, context: str) -> int:
        """Log the error, print its message to stderr and return the exit code."""
        self.log_error(error, context)
        sys.stderr.write(self.describe(error) + "\n")
        return self.exit_code_for(error)

    def handle_validation_error(self, validation_result: ValidationResult, context: str = "") -> str:
        """Format a failed ValidationResult as a message, logging the failure."""
        if validation_result.is_valid:
            return ""

        self.logger.warning(f"Validation failed - {context}: {validation_result.errors}")

        lines = [f"{context}: " + "; ".join(validation_result.errors) if context else "; ".join(validation_result.errors)]
        for warning in validation_result.warnings:
            lines.append(f"warning: {warning}")
        return "\n".join(lines)

