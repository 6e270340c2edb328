"""
Logging Configuration for commscape

Environment profiles (development, production, test) decide the level, the
line format and whether rotating log files are kept. Console output always
goes to standard error; reports own standard output.
"""

import functools
import json
import logging
import logging.handlers
import sys
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

PLAIN_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
MEGABYTE = 1024 * 1024

# record attributes copied into JSON lines when a LoggerAdapter or extra= sets them
CONTEXT_FIELDS = ('operation_id', 'dataset', 'command', 'metric')


class JSONFormatter(logging.Formatter):
    """One JSON object per record, keys sorted."""

    def format(self, record):
        entry: Dict[str, Any] = {
            'timestamp': datetime.fromtimestamp(record.created, timezone.utc).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'location': f"{record.module}.{record.funcName}:{record.lineno}",
        }
        for name in CONTEXT_FIELDS:
            if hasattr(record, name):
                entry[name] = getattr(record, name)
        if record.exc_info:
            entry['exception'] = self.formatException(record.exc_info)
        return json.dumps(entry, sort_keys=True, default=str)


@dataclass(frozen=True)
class LoggingProfile:
    """Logging defaults for one APP_ENV value."""
    level: str
    json_lines: bool
    file_logs: bool
    max_file_mb: int = 10
    backup_count: int = 3


PROFILES: Dict[str, LoggingProfile] = {
    'development': LoggingProfile(level='INFO', json_lines=False, file_logs=True),
    'production': LoggingProfile(level='INFO', json_lines=True, file_logs=True, max_file_mb=50, backup_count=10),
    'test': LoggingProfile(level='WARNING', json_lines=False, file_logs=False),
}


class ApplicationLogger:
    """Owns the root logger setup for one process."""

    COMPONENT_LOGGERS = (
        'graph_core',
        'path_similarity',
        'clustering',
        'community_pipeline',
        'quality_scoring',
        'csv_processor',
        'monitoring',
        'utils',
        'cli',
        'operations',
    )

    # numerical stack stays at WARNING or quieter
    QUIET_LIBRARIES = ('numpy', 'scipy', 'pandas', 'networkx')

    def __init__(self, app_name: str = "commscape"):
        self.app_name = app_name
        self.environment: Optional[str] = None

    @property
    def configured(self) -> bool:
        return self.environment is not None

    def _file_handlers(self, log_dir: str, profile: LoggingProfile,
                       formatter: logging.Formatter, level: int) -> List[logging.Handler]:
        directory = Path(log_dir)
        directory.mkdir(parents=True, exist_ok=True)
        handlers = []
        for suffix, handler_level in (("", level), ("_errors", logging.ERROR)):
            handler = logging.handlers.RotatingFileHandler(
                directory / f"{self.app_name}{suffix}.log",
                maxBytes=profile.max_file_mb * MEGABYTE,
                backupCount=profile.backup_count,
                encoding="utf-8",
            )
            handler.setFormatter(formatter)
            handler.setLevel(handler_level)
            handlers.append(handler)
        return handlers

    def configure_logging(
        self,
        environment: str = "development",
        log_level: Optional[str] = None,
        log_dir: Optional[str] = None,
        force: bool = False,
    ) -> None:
        """
        Replace the root logger's handlers according to an environment profile.

        Args:
            environment: development, production or test; unknown names use
                the development profile
            log_level: Overrides the profile level
            log_dir: Directory for rotating log files; ignored by profiles
                without file logs
            force: Reconfigure even if logging was configured before
        """
        if self.configured and not force:
            return

        profile = PROFILES.get(environment, PROFILES['development'])
        level_name = (log_level or profile.level).upper()
        level = getattr(logging, level_name, logging.INFO)
        formatter = JSONFormatter() if profile.json_lines else logging.Formatter(PLAIN_FORMAT)

        root_logger = logging.getLogger()
        for handler in root_logger.handlers[:]:
            root_logger.removeHandler(handler)
        root_logger.setLevel(level)

        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(formatter)
        console.setLevel(level)
        root_logger.addHandler(console)
        if log_dir and profile.file_logs:
            for handler in self._file_handlers(log_dir, profile, formatter, level):
                root_logger.addHandler(handler)

        for component in self.COMPONENT_LOGGERS:
            logging.getLogger(component).setLevel(level)
        for library in self.QUIET_LIBRARIES:
            logging.getLogger(library).setLevel(max(logging.WARNING, level))

        self.environment = environment
        logging.getLogger(__name__).debug(f"Logging configured for {environment} at {level_name}")

    def log_performance_metric(self, operation: str, duration: float, success: bool, **details: Any) -> None:
        """Emit a PERFORMANCE_METRIC line on the 'performance' logger."""
        metric = dict(details, operation=operation, duration_seconds=round(duration, 6), success=success)
        logging.getLogger('performance').debug(
            f"PERFORMANCE_METRIC: {json.dumps(metric, sort_keys=True)}", extra={'metric': metric}
        )

    def create_operation_logger(self, operation_id: str) -> logging.LoggerAdapter:
        """Adapter tagging every record with a dataset or batch-entry id."""
        return logging.LoggerAdapter(logging.getLogger('operations'), {'operation_id': operation_id})


app_logger = ApplicationLogger()


def setup_logging(environment: str = "development", log_level: Optional[str] = None,
                  log_dir: Optional[str] = None, force: bool = False) -> ApplicationLogger:
    """Configure the shared ApplicationLogger and return it."""
    app_logger.configure_logging(environment=environment, log_level=log_level, log_dir=log_dir, force=force)
    return app_logger


def log_performance(operation_name: str):
    """Decorator timing a function and logging the outcome as a metric."""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            started = time.perf_counter()
            success = False
            try:
                result = func(*args, **kwargs)
                success = True
                return result
            except Exception as e:
                logging.getLogger(func.__module__).debug(f"Operation {operation_name} failed: {e}")
                raise
            finally:
                app_logger.log_performance_metric(
                    operation_name,
                    time.perf_counter() - started,
                    success,
                    function=func.__qualname__,
                    module=func.__module__,
                )

        return wrapper
    return decorator
