"""Wall-clock benchmarking of Krylov runs."""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from rich.console import Console
from rich.table import Table


@dataclass
class OperationStats:
    """Statistics for a single operation."""
    name: str
    start_time: float
    end_time: float = 0.0
    success: bool = True
    error_message: str = ""

    @property
    def duration(self) -> float:
        """Get operation duration in seconds."""
        return self.end_time - self.start_time if self.end_time > 0 else 0.0


@dataclass
class VariantStats:
    """Accumulated step timings of one basis family (full or truncated)."""
    family: str
    steps: int = 0
    total_time: float = 0.0
    operations: List[OperationStats] = field(default_factory=list)

    def add_operation(self, operation: OperationStats):
        self.operations.append(operation)
        self.steps += 1
        self.total_time += operation.duration

    @property
    def per_step_ms(self) -> float:
        return 1000.0 * self.total_time / self.steps if self.steps else 0.0


class BenchmarkCollector:
    """Collects and manages benchmark data.

    Families run on separate worker threads, so bookkeeping is guarded by a lock.
    """

    def __init__(self):
        self.overall_start_time = time.perf_counter()
        self.overall_end_time = 0.0
        self.family_stats: Dict[str, VariantStats] = {}
        self.current_operations: Dict[str, OperationStats] = {}
        self._ids = itertools.count()
        self._lock = threading.Lock()

    def start_operation(self, operation_name: str, context: str = "") -> str:
        """Start timing an operation.

        Parameters
        ----------
        operation_name: str
            Name of the operation
        context: str
            Basis family the operation belongs to

        Returns
        -------
        str
            Operation ID for later reference
        """
        with self._lock:
            op_id = f"{operation_name}_{context}_{next(self._ids)}"
            self.current_operations[op_id] = OperationStats(name=operation_name, start_time=time.perf_counter())
        return op_id

    def end_operation(self, op_id: str, success: bool = True, error_message: str = "",
                      context: str = "") -> Optional[OperationStats]:
        """End timing an operation and file it under ``context``."""
        end = time.perf_counter()
        with self._lock:
            operation = self.current_operations.pop(op_id, None)
            if operation is None:
                return None
            operation.end_time = end
            operation.success = success
            operation.error_message = error_message
            if context:
                self.family_stats.setdefault(context, VariantStats(context)).add_operation(operation)
        return operation

    def finish_benchmark(self):
        """Mark the end of benchmarking."""
        self.overall_end_time = time.perf_counter()

    @property
    def total_duration(self) -> float:
        end_time = self.overall_end_time if self.overall_end_time > 0 else time.perf_counter()
        return end_time - self.overall_start_time

    def get_summary(self) -> Dict[str, Any]:
        """Get benchmark summary statistics."""
        families = {
            name: {"steps": stats.steps, "total_time": stats.total_time, "per_step_ms": stats.per_step_ms}
            for name, stats in sorted(self.family_stats.items())
        }
        failures = sum(1 for stats in self.family_stats.values() for op in stats.operations if not op.success)
        return {
            "total_duration": self.total_duration,
            "steps": sum(stats.steps for stats in self.family_stats.values()),
            "failed_operations": failures,
            "families": families,
        }

    def print_summary(self, console: Optional[Console] = None):
        """Render the summary as a table."""
        summary = self.get_summary()
        console = console or Console()
        table = Table(title="Performance benchmark")
        table.add_column("Family")
        table.add_column("Steps", justify="right")
        table.add_column("Total [s]", justify="right")
        table.add_column("Per step [ms]", justify="right")
        for name, stats in summary["families"].items():
            table.add_row(name, str(stats["steps"]), f"{stats['total_time']:.3f}", f"{stats['per_step_ms']:.2f}")
        console.print(table)
        console.print(f"Total duration: {summary['total_duration']:.2f}s")


# Global benchmark collector
_benchmark_collector: BenchmarkCollector = BenchmarkCollector()


def get_benchmark_collector() -> BenchmarkCollector:
    """Get the global benchmark collector."""
    return _benchmark_collector


def reset_benchmark_collector():
    """Reset the global benchmark collector."""
    global _benchmark_collector
    _benchmark_collector = BenchmarkCollector()


class TimedOperation:
    """Context manager for timing operations."""

    def __init__(self, operation_name: str, context: str = "", collector: Optional[BenchmarkCollector] = None):
        """Initialize timed operation.

        Parameters
        ----------
        operation_name: str
            Name of the operation
        context: str
            Basis family, used to group timings
        collector: BenchmarkCollector
            Collector to use, defaults to global collector
        """
        self.operation_name = operation_name
        self.context = context
        self.collector = collector or get_benchmark_collector()
        self.op_id: str = ""
        self.stats: Optional[OperationStats] = None

    def __enter__(self):
        self.op_id = self.collector.start_operation(self.operation_name, self.context)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        success = exc_type is None
        error_message = str(exc_val) if exc_val else ""
        self.stats = self.collector.end_operation(self.op_id, success, error_message, context=self.context)

    @property
    def duration_ms(self) -> float:
        return 1000.0 * self.stats.duration if self.stats else 0.0
