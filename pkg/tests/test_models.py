import math
from pathlib import Path

import pytest

from krylovsketch.matfun import Variant
from krylovsketch.models import (
    AssertionRecord,
    ConfigError,
    ConvergenceTrace,
    ExperimentResult,
    RunConfig,
    TraceRow,
    failure_report,
    read_csv_table,
    write_csv_table,
)
from krylovsketch.sketch import SketchKind


def test_run_config_defaults():
    config = RunConfig(generator="condiff").validate()
    assert config.d_max == 50
    assert config.trunc_k == 2
    assert config.sketch_kind is SketchKind.SPARSE_SIGN
    assert config.effective_sketch_dim == 100
    assert config.variants == list(Variant)
    assert config.sketched


def test_run_config_with_matrix_file(tmp_path: Path):
    path = tmp_path / "A.mtx"
    path.write_text("")
    config = RunConfig(matrix_path=path).validate()
    assert config.source_label() == str(path)


@pytest.mark.parametrize(
    "kwargs, message",
    [
        ({}, "exactly one of"),
        ({"generator": "condiff", "matrix_path": Path("A.mtx")}, "exactly one of"),
        ({"generator": "laplace"}, "unknown generator 'laplace'"),
        ({"matrix_path": Path("/nonexistent/A.mtx")}, "matrix file not found"),
        ({"generator": "condiff", "d_max": 0}, "d_max must be at least 1"),
        ({"generator": "condiff", "trunc_k": -1}, "truncation length"),
        ({"generator": "condiff", "variants": []}, "at least one variant"),
        ({"generator": "condiff", "sketch_dim": 0}, "sketch dimension"),
        ({"generator": "condiff", "function": "log"}, "unknown function 'log'"),
        ({"generator": "condiff", "seed": -1}, "unsigned 64-bit"),
        ({"generator": "condiff", "seed": 2**64}, "unsigned 64-bit"),
        ({"generator": "condiff", "diag_stride": 0}, "diagnostic stride"),
        ({"generator": "condiff", "agreement_window": -5}, "agreement window"),
        ({"generator": "condiff", "threads": 0}, "thread count"),
    ],
)
def test_run_config_validation(kwargs, message):
    with pytest.raises(ConfigError) as exc:
        RunConfig(**kwargs).validate()
    assert message in str(exc.value)


def test_sketch_dimension_ignored_without_sketched_variants():
    config = RunConfig(generator="condiff", variants=[Variant.FOM], sketch_dim=0)
    assert not config.sketched
    assert config.validate() is config


def test_config_error_is_value_error():
    assert issubclass(ConfigError, ValueError)


def test_source_label_and_header():
    config = RunConfig(generator="condiff", gen_args={"nu": 0.01, "N": 20}, sketch_dim=64, seed=3)
    assert config.source_label() == "condiff(N=20,nu=0.01)"
    header = config.to_header()
    assert header["gen_args"] == {"N": 20, "nu": 0.01}
    assert header["sketch_kind"] == "sparse-sign"
    assert header["sketch_dim"] == 64
    assert header["seed"] == 3
    assert header["matrix"] is None
    assert header["reference"] == "auto"
    assert header["variants"][0] == "fom"


def test_trace_add_validates_rows():
    trace = ConvergenceTrace()
    trace.add(TraceRow(1, "fom", 0.5))
    trace.add(TraceRow(1, "trfom", math.inf))
    with pytest.raises(ValueError) as exc:
        trace.add(TraceRow(1, "fom", 0.1))
    assert "increasing d" in str(exc.value)
    with pytest.raises(ValueError):
        trace.add(TraceRow(2, "fom", math.nan))
    with pytest.raises(ValueError):
        trace.add(TraceRow(2, "fom", -1.0))


def test_trace_accessors():
    trace = ConvergenceTrace()
    for d in (1, 2, 3):
        trace.add(TraceRow(d, "fom", 10.0**-d))
        trace.add(TraceRow(d, "sfom_whitened", 2 * 10.0**-d, kappa_Ud=1.5))
    assert trace.variants() == ["fom", "sfom_whitened"]
    assert [row.d for row in trace.for_variant(Variant.SFOM_WHITENED)] == [1, 2, 3]
    assert trace.errors("fom") == {1: 0.1, 2: 0.01, 3: 0.001}


def test_trace_csv_round_trip(tmp_path: Path):
    trace = ConvergenceTrace(metadata={"seed": 0, "n": 4}, notes=["d_max capped at n=4"])
    trace.add(TraceRow(1, "fom", 0.25, kappa_Ud=1.0))
    trace.add(TraceRow(1, "sfom_pinv", 1.0 / 3.0, kappa_Ud=2.0, epsilon_hat=0.4, norm_r=0.01, tau_ratio=0.5))
    path = tmp_path / "out" / "trace.csv"
    trace.write_csv(path)

    metadata, rows, notes = read_csv_table(path)
    assert metadata == {"seed": 0, "n": 4}
    assert notes == ["d_max capped at n=4"]
    assert [row["variant"] for row in rows] == ["fom", "sfom_pinv"]
    assert float(rows[1]["rel_error"]) == 1.0 / 3.0
    assert rows[0]["epsilon_hat"] == "nan"
    assert rows[0]["wallclock_ms"] == "0.0"


def test_trace_csv_variant_filter(tmp_path: Path):
    trace = ConvergenceTrace()
    trace.add(TraceRow(1, "fom", 0.5))
    trace.add(TraceRow(1, "trfom", 0.6))
    path = tmp_path / "trace.csv"
    trace.write_csv(path, variants=["trfom"])
    _, rows, _ = read_csv_table(path)
    assert [row["variant"] for row in rows] == ["trfom"]


def test_csv_first_line_is_metadata(tmp_path: Path):
    path = tmp_path / "table.csv"
    write_csv_table(path, ["k", "value"], [[1, 0.5], [2, math.inf]], {"command": "demo"})
    lines = path.read_text().splitlines()
    assert lines[0] == '# {"command": "demo"}'
    assert lines[1] == "k,value"
    assert lines[3] == "2,inf"


def test_failure_report():
    records = [
        AssertionRecord("difference decreases", True),
        AssertionRecord("bound holds at d=30", False, "ratio 1.2"),
    ]
    report = failure_report("experiment-toeplitz-bound", records)
    assert report["command"] == "experiment-toeplitz-bound"
    assert not report["passed"]
    assert report["checked"] == 2
    assert report["failures"] == [{"name": "bound holds at d=30", "passed": False, "detail": "ratio 1.2"}]


def test_passed_properties():
    result = ExperimentResult("experiment-condiff", assertions=[AssertionRecord("a", True)])
    assert result.passed
    result.assertions.append(AssertionRecord("b", False))
    assert not result.passed
    trace = ConvergenceTrace()
    assert trace.passed
