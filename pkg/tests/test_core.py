import json
import math
from pathlib import Path

import numpy as np
import pytest

from krylovsketch.cache import ReferenceCache
from krylovsketch.core import (
    ExperimentError,
    _condiff_checks,
    _first_reach,
    _longest_increase,
    cmd_experiment_condiff,
    cmd_experiment_eigvec_growth,
    cmd_experiment_toeplitz_bound,
    cmd_run,
    compute_reference,
    execute_run,
    load_problem,
    side_path,
)
from krylovsketch.functions import EXP
from krylovsketch.krylov import run_arnoldi
from krylovsketch.matfun import Variant
from krylovsketch.models import ConfigError, ConvergenceTrace, ReferenceMode, RunConfig, TraceRow, read_csv_table
from krylovsketch.sketch import SketchKind, whitening_bound
from krylovsketch.sparse import SparseMatrix, gen_toeplitz, write_matrix_market


@pytest.fixture(autouse=True)
def isolated_cache(monkeypatch, tmp_path: Path):
    cache_dir = tmp_path / "cache"
    monkeypatch.setenv("KRYLOV_CACHE_DIR", str(cache_dir))
    return cache_dir


def small_config(tmp_path: Path, **overrides) -> RunConfig:
    settings = dict(
        generator="toeplitz",
        gen_args={"d": 100},
        d_max=30,
        sketch_kind=SketchKind.GAUSSIAN,
        sketch_dim=60,
        function="exp",
        out=tmp_path / "trace.csv",
        use_cache=False,
    )
    settings.update(overrides)
    return RunConfig(**settings)


def test_load_problem_generator():
    problem = load_problem(RunConfig(generator="condiff", gen_args={"N": 6}))
    assert problem.n == 36
    assert np.linalg.norm(problem.b) == pytest.approx(1.0)
    assert problem.label == "condiff(N=6)"


def test_load_problem_rejects_unknown_argument():
    with pytest.raises(ConfigError) as exc:
        load_problem(RunConfig(generator="toeplitz", gen_args={"N": 6}))
    assert "unknown argument(s) N" in str(exc.value)
    assert "accepted: d" in str(exc.value)


def test_load_problem_wraps_generator_errors():
    with pytest.raises(ConfigError):
        load_problem(RunConfig(generator="toeplitz", gen_args={"d": 2}))


def test_long_fom_reference_matches_dense(tmp_path: Path):
    config = small_config(tmp_path, d_max=40)
    problem = load_problem(config)
    dense, mode = compute_reference(problem, EXP, config)
    assert mode is ReferenceMode.DENSE
    long_fom, mode = compute_reference(problem, EXP, small_config(tmp_path, d_max=40, reference=ReferenceMode.LONG_FOM))
    assert mode is ReferenceMode.LONG_FOM
    assert np.linalg.norm(long_fom - dense) <= 1e-10 * np.linalg.norm(dense)


def test_reference_is_cached(tmp_path: Path, isolated_cache, mocker):
    config = small_config(tmp_path, reference=ReferenceMode.LONG_FOM, use_cache=True)
    problem = load_problem(config)
    first, _ = compute_reference(problem, EXP, config)
    assert ReferenceCache(isolated_cache).size() == 1

    mocker.patch("krylovsketch.core._long_fom_reference", side_effect=AssertionError("not cached"))
    second, _ = compute_reference(problem, EXP, config)
    np.testing.assert_array_equal(second, first)


def test_reference_failure_raises_experiment_error(tmp_path: Path, mocker):
    config = small_config(tmp_path, reference=ReferenceMode.LONG_FOM)
    problem = load_problem(config)
    mocker.patch("krylovsketch.core._long_fom_reference", side_effect=np.linalg.LinAlgError("no convergence"))
    with pytest.raises(ExperimentError) as exc:
        compute_reference(problem, EXP, config)
    assert "reference computation failed (long-fom)" in str(exc.value)
    assert isinstance(exc.value.__cause__, np.linalg.LinAlgError)


def test_cmd_run_writes_trace(tmp_path: Path, capsys):
    config = small_config(tmp_path)
    trace = cmd_run(config)

    assert "Wrote" in capsys.readouterr().out
    metadata, rows, notes = read_csv_table(config.out)
    assert metadata["n"] == 100
    assert metadata["reference_mode"] == "dense"
    assert metadata["embedding"]["kind"] == "gaussian"
    assert metadata["sketch_dim"] == 60
    assert len(rows) == len(trace.rows)
    assert set(trace.variants()) == {v.value for v in Variant}
    for variant in Variant:
        assert [row.d for row in trace.for_variant(variant)] == list(range(1, 31))
    assert trace.errors(Variant.FOM)[30] < 1e-6
    assert trace.errors(Variant.SFOM_WHITENED)[30] < 1e-4


def test_trace_columns(tmp_path: Path):
    trace = execute_run(small_config(tmp_path, diag_stride=5)).trace
    fom_row = trace.for_variant(Variant.FOM)[0]
    assert fom_row.kappa_Ud == 1.0
    assert math.isnan(fom_row.norm_r)
    whitened = {row.d: row for row in trace.for_variant(Variant.SFOM_WHITENED)}
    assert whitened[5].epsilon_hat < 1.0
    assert not math.isnan(whitened[5].tau_ratio)
    assert math.isnan(whitened[4].epsilon_hat)
    assert math.isnan(whitened[4].kappa_Ud)
    assert whitened[4].kappa_Td >= 1.0
    assert whitened[4].norm_r >= 0.0
    assert math.isnan(trace.for_variant(Variant.TRFOM)[0].norm_r)
    assert all(row.wallclock_ms == 0.0 for row in trace.rows)


def test_kappa_columns_measure_basis_and_triangular_factor(tmp_path: Path):
    config = small_config(tmp_path, diag_stride=5)
    trace = execute_run(config).trace
    row = {r.d: r for r in trace.for_variant(Variant.SFOM_WHITENED)}[5]
    problem = load_problem(config)
    state = run_arnoldi(problem.A, problem.b, 5, k=config.trunc_k)
    assert row.epsilon_hat < 1.0
    assert row.kappa_Ud == pytest.approx(np.linalg.cond(state.U_d), rel=1e-8)
    # ||S x||^2 within (1 +- eps) ||x||^2 on range(U_d) links the two condition numbers
    assert row.kappa_Ud <= row.kappa_Td * whitening_bound(row.epsilon_hat) * (1.0 + 1e-8)
    assert row.kappa_Td <= row.kappa_Ud * whitening_bound(row.epsilon_hat) * (1.0 + 1e-8)


def test_runs_are_reproducible(tmp_path: Path):
    first = small_config(tmp_path, out=tmp_path / "first.csv")
    second = small_config(tmp_path, out=tmp_path / "second.csv")
    cmd_run(first)
    cmd_run(second)
    assert first.out.read_bytes() == second.out.read_bytes()


def test_matrix_file_input(tmp_path: Path):
    path = tmp_path / "A.mtx"
    write_matrix_market(path, SparseMatrix.from_dense(gen_toeplitz(8)))
    config = RunConfig(matrix_path=path, d_max=5, variants=[Variant.FOM], use_cache=False)
    trace = execute_run(config).trace
    assert trace.metadata["matrix"] == str(path)
    assert trace.metadata["embedding"] is None
    assert len(trace.rows) == 5


def test_d_max_capped_at_order(tmp_path: Path):
    config = small_config(tmp_path, gen_args={"d": 6}, d_max=10, variants=[Variant.FOM, Variant.TRFOM])
    trace = execute_run(config).trace
    assert any("capped at the matrix order n=6" in note for note in trace.notes)
    assert max(row.d for row in trace.rows) <= 6


def test_sketched_variants_stop_when_sketch_is_exhausted(tmp_path: Path):
    config = small_config(tmp_path, gen_args={"d": 16}, d_max=12, sketch_dim=8)
    trace = execute_run(config).trace
    assert any("sketch dimension s=8 exhausted" in note for note in trace.notes)
    assert max(row.d for row in trace.for_variant(Variant.SFOM_WHITENED)) == 7
    assert max(row.d for row in trace.for_variant(Variant.TRFOM)) == 12


def test_sketch_dimension_larger_than_order(tmp_path: Path):
    with pytest.raises(ConfigError) as exc:
        execute_run(small_config(tmp_path, sketch_dim=200))
    assert "exceeds ambient dimension" in str(exc.value)


def test_agreement_window_assertion(tmp_path: Path):
    trace = execute_run(small_config(tmp_path, agreement_window=10)).trace
    names = [record.name for record in trace.assertions]
    assert names == ["sketched variants agree for d <= 10"]
    assert trace.passed


def test_agreement_reported_only_without_window(tmp_path: Path):
    trace = execute_run(small_config(tmp_path)).trace
    assert trace.assertions == []


def test_benchmark_records_wallclock(tmp_path: Path, capsys):
    trace = cmd_run(small_config(tmp_path, d_max=5, record_timing=True))
    assert all(row.wallclock_ms > 0.0 for row in trace.rows)
    assert "Performance benchmark" in capsys.readouterr().out


@pytest.mark.parametrize(
    "out, suffix, expected",
    [
        ("results/run.csv", "_fov", "results/run_fov.csv"),
        ("run", "_variants", "run_variants.csv"),
    ],
)
def test_side_path(out, suffix, expected):
    assert side_path(Path(out), suffix) == Path(expected)


def test_first_reach_and_longest_increase():
    errors = {1: 1.0, 2: 0.1, 3: 0.2, 4: 0.3, 5: 0.01, 6: 0.02}
    assert _first_reach(errors, 0.1) == 2
    assert _first_reach(errors, 0.1, start=3) == 5
    assert _first_reach(errors, 1e-5) is None
    assert _longest_increase(errors) == 2
    assert _longest_increase(errors, start=4) == 1
    assert _longest_increase({1: 1.0, 2: math.inf}) == 0


def test_condiff_checks_fail_on_empty_trace():
    records = _condiff_checks(ConvergenceTrace())
    assert len(records) == 6
    assert not any(record.passed for record in records)


def test_condiff_monotone_check_needs_a_transient():
    trace = ConvergenceTrace()
    for d in range(1, 30):
        trace.add(TraceRow(d, Variant.SFOM_WHITENED.value, 0.5 / d))
    records = {record.name: record for record in _condiff_checks(trace)}
    assert not records["sfom_whitened monotone after the transient"].passed


def test_experiment_toeplitz_bound(tmp_path: Path, capsys):
    out = tmp_path / "toeplitz_bound.csv"
    result = cmd_experiment_toeplitz_bound(out)
    metadata, rows, _ = read_csv_table(out)
    assert metadata["seed"] == 21
    assert [int(row["d"]) for row in rows] == [5, 10, 15, 20, 25, 30]
    for row in rows:
        assert float(row["rigorous_bound"]) >= float(row["true_diff"])
    late = [float(row["true_diff"]) for row in rows if int(row["d"]) >= 15]
    assert all(later < earlier for earlier, later in zip(late, late[1:]))
    # far below the round-off of exp(M) e_1 itself
    assert late[-1] < 1e-18
    assert all(record.passed for record in result.assertions), [r for r in result.assertions if not r.passed]
    assert str(out) in capsys.readouterr().out


def test_experiment_eigvec_growth(tmp_path: Path):
    out = tmp_path / "eigvec_growth.csv"
    result = cmd_experiment_eigvec_growth(out)
    assert result.outputs == [out, tmp_path / "eigvec_growth_fov.csv", tmp_path / "eigvec_growth_spectra.csv"]
    metadata, rows, _ = read_csv_table(out)
    assert metadata["d"] == 100
    assert metadata["outliers_found"]
    assert metadata["gamma_far"] > 1.0
    assert metadata["w_scale"] >= 1.0
    assert len(rows) == 100
    assert float(rows[-1]["phi_far"]) == 1.0
    assert float(rows[0]["eta_far"]) <= 1e-12
    _, fov_rows, _ = read_csv_table(result.outputs[1])
    assert len(fov_rows) == 256
    _, spectra, _ = read_csv_table(result.outputs[2])
    assert {row["set"] for row in spectra} == {"M", "modified"}
    assert all(record.passed for record in result.assertions), [r for r in result.assertions if not r.passed]


@pytest.mark.slow
def test_experiment_condiff(tmp_path: Path):
    out = tmp_path / "condiff.csv"
    result = cmd_experiment_condiff(out, use_cache=False)
    variants_path, truncated_path = result.outputs
    _, rows, _ = read_csv_table(truncated_path)
    assert {row["variant"] for row in rows} == {"sfom_whitened", "trfom"}
    _, rows, _ = read_csv_table(variants_path)
    assert "trfom" not in {row["variant"] for row in rows}
    names = {record.name for record in result.assertions}
    assert {
        "sketched variants agree for d <= 60",
        "sfom_whitened reaches 1e-10",
        "sfom_whitened tracks fom within a factor 100",
        "sfom_rankone_expm has a non-monotone segment",
        "sfom_whitened monotone after the transient",
        "trfom reaches 1e-11 near d=200",
        "sfom_whitened saves 15-35% of the steps",
    } <= names
    assert all(record.passed for record in result.assertions), [r for r in result.assertions if not r.passed]
