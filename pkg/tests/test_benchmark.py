import pytest
from rich.console import Console

from krylovsketch.benchmark import (
    BenchmarkCollector,
    OperationStats,
    TimedOperation,
    VariantStats,
    get_benchmark_collector,
    reset_benchmark_collector,
)


def test_operation_duration():
    assert OperationStats("step", start_time=1.0).duration == 0.0
    assert OperationStats("step", start_time=1.0, end_time=1.5).duration == pytest.approx(0.5)


def test_variant_stats_accumulate():
    stats = VariantStats("truncated")
    stats.add_operation(OperationStats("step", 0.0, 0.002))
    stats.add_operation(OperationStats("step", 0.0, 0.004))
    assert stats.steps == 2
    assert stats.per_step_ms == pytest.approx(3.0)
    assert VariantStats("full").per_step_ms == 0.0


def test_collector_groups_by_family():
    collector = BenchmarkCollector()
    for family in ("full", "truncated", "truncated"):
        op_id = collector.start_operation("step", family)
        collector.end_operation(op_id, context=family)
    collector.finish_benchmark()
    summary = collector.get_summary()
    assert summary["steps"] == 3
    assert summary["families"]["truncated"]["steps"] == 2
    assert list(summary["families"]) == ["full", "truncated"]
    assert summary["total_duration"] >= 0.0


def test_end_unknown_operation():
    assert BenchmarkCollector().end_operation("missing") is None


def test_timed_operation_records_failure():
    collector = BenchmarkCollector()
    with pytest.raises(RuntimeError):
        with TimedOperation("step", "full", collector):
            raise RuntimeError("boom")
    summary = collector.get_summary()
    assert summary["failed_operations"] == 1
    assert collector.family_stats["full"].operations[0].error_message == "boom"


def test_timed_operation_duration():
    collector = BenchmarkCollector()
    with TimedOperation("step", "truncated", collector) as timer:
        pass
    assert timer.stats is not None
    assert timer.duration_ms >= 0.0


def test_global_collector_reset():
    first = get_benchmark_collector()
    reset_benchmark_collector()
    assert get_benchmark_collector() is not first


def test_print_summary():
    collector = BenchmarkCollector()
    op_id = collector.start_operation("step", "full")
    collector.end_operation(op_id, context="full")
    console = Console(record=True, width=100)
    collector.print_summary(console)
    text = console.export_text()
    assert "Performance benchmark" in text
    assert "full" in text
    assert "Total duration" in text
