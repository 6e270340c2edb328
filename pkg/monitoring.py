"""
Monitoring Module for commscape

Per-phase timings for one command run. They end up in a side-channel run
report next to the main output, never in the output itself, so reports stay
byte-identical between runs.
"""

import functools
import logging
import time
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Deque, Dict, Optional, Union

import pandas as pd

from utils import dumps_report


logger = logging.getLogger(__name__)


@dataclass
class PerformanceMetric:
    """One timed phase."""
    operation: str
    duration: float
    success: bool
    timestamp: datetime = field(default_factory=lambda: datetime.now(timezone.utc))
    details: Dict[str, Any] = field(default_factory=dict)

    def to_phase(self) -> Dict[str, Any]:
        return {'operation': self.operation, 'duration_seconds': round(self.duration, 6), 'success': self.success}


def _peak_memory_mb() -> Optional[float]:
    """Peak resident memory in MiB; None where getrusage is unavailable."""
    try:
        import resource
    except ImportError:
        return None
    # KiB on Linux
    return round(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0, 3)


class RunMonitor:
    """Bounded history of the phases timed during one run."""

    def __init__(self, max_history_size: int = 1000):
        self.metrics_history: Deque[PerformanceMetric] = deque(maxlen=max_history_size)
        self.started_at = datetime.now(timezone.utc)

    def record_metric(self, operation: str, duration: float, success: bool, **details: Any) -> None:
        self.metrics_history.append(PerformanceMetric(operation, duration, success, details=details))
        logger.debug(f"{operation} took {duration:.4f}s (success={success})")

    def reset(self) -> None:
        self.metrics_history.clear()
        self.started_at = datetime.now(timezone.utc)

    def get_performance_summary(self) -> Dict[str, Any]:
        """
        Totals over the recorded phases.

        Returns:
            Dictionary with operation counts, total duration and a
            per-operation breakdown (count, successes, total and mean duration)
        """
        if not self.metrics_history:
            return {
                'total_operations': 0,
                'successful_operations': 0,
                'failed_operations': 0,
                'total_duration': 0.0,
                'operations_by_type': {},
            }

        frame = pd.DataFrame(
            [(m.operation, m.duration, m.success) for m in self.metrics_history],
            columns=['operation', 'duration', 'success'],
        )
        by_type = frame.groupby('operation', sort=True).agg(
            count=('duration', 'size'),
            success_count=('success', 'sum'),
            total_duration=('duration', 'sum'),
            avg_duration=('duration', 'mean'),
        )
        successes = int(frame['success'].sum())
        return {
            'total_operations': len(frame),
            'successful_operations': successes,
            'failed_operations': len(frame) - successes,
            'total_duration': float(frame['duration'].sum()),
            'operations_by_type': by_type.to_dict(orient='index'),
        }

    def build_run_report(self, command: str, threads: int, exit_code: int) -> Dict[str, Any]:
        return {
            'command': command,
            'threads': threads,
            'exit_code': exit_code,
            'started_at': self.started_at.isoformat(),
            'peak_memory_mb': _peak_memory_mb(),
            'phases': [metric.to_phase() for metric in self.metrics_history],
            'summary': self.get_performance_summary(),
        }

    def write_run_report(self, path: Union[str, Path], command: str, threads: int, exit_code: int) -> None:
        """Write the run report; a failed write is logged, not raised."""
        try:
            Path(path).write_text(dumps_report(self.build_run_report(command, threads, exit_code)), encoding="utf-8")
        except OSError as e:
            logger.warning(f"Could not write run report {path}: {e}")


app_monitor = RunMonitor()


def get_monitor() -> RunMonitor:
    return app_monitor


def monitor_performance(operation_name: str):
    """Decorator recording the wrapped call as one phase of the current run."""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            started = time.perf_counter()
            success = False
            try:
                result = func(*args, **kwargs)
                success = True
                return result
            finally:
                app_monitor.record_metric(operation_name, time.perf_counter() - started, success,
                                          function=func.__qualname__)

        return wrapper
    return decorator
