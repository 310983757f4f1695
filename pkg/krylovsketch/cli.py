"""Command-line interface for runs and reproduction experiments."""

from __future__ import annotations

import argparse
import json
import os
from pathlib import Path
from typing import List

from dotenv import load_dotenv

from .core import (
    ExperimentError,
    cmd_experiment_condiff,
    cmd_experiment_eigvec_growth,
    cmd_experiment_toeplitz_bound,
    cmd_run,
)
from .logger import setup_logger
from .models import AssertionRecord, ConfigError, ReferenceMode, RunConfig, failure_report
from .parser import parse_gen_args, parse_variants
from .sketch import SketchKind
from .sparse import MatrixFormatError
from .utils import sketch_threads


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def parse_args() -> argparse.Namespace:
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(description="Sketched and truncated Krylov methods for f(A)b")
    parser.add_argument("--log", help="Log file path for detailed logging")
    parser.add_argument("--verbose", "-v", action="count", default=0, help="Increase console verbosity")
    parser.add_argument("--no-color", action="store_true", help="Disable colored console output")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="Run Krylov variants and write a convergence trace")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--matrix", help="Matrix Market file with the matrix A")
    source.add_argument("--gen", choices=["condiff", "toeplitz"], help="Generate a test matrix")
    run.add_argument("--gen-args", default="", help="Generator parameters, e.g. N=50,nu=1e-2")
    run.add_argument("--dmax", type=int, default=50, help="Largest Krylov dimension")
    run.add_argument("--trunc-k", type=int, default=2, help="Truncation length (0 = full orthogonalization)")
    run.add_argument("--sketch-kind", choices=[k.label for k in SketchKind], default=SketchKind.SPARSE_SIGN.label)
    run.add_argument("--sketch-dim", type=int, help="Sketch dimension (default 2*dmax)")
    run.add_argument("--seed", type=_seed, default=0, help="Seed of the embedding")
    run.add_argument("--variant", default="all", help="Comma separated variants or 'all'")
    run.add_argument("--func", choices=["exp", "nexp"], default="exp", help="Function f, nexp is exp(-x)")
    run.add_argument("--ref", choices=[m.value for m in ReferenceMode], default=ReferenceMode.AUTO.value,
                     help="How the reference solution is computed")
    run.add_argument("--out", default="trace.csv", help="Output CSV path")
    run.add_argument("--diag-stride", type=int, default=10, help="Steps between basis diagnostics")
    run.add_argument("--agreement-window", type=int, default=0,
                     help="Assert sketched variants agree up to this dimension (0 = report only)")
    run.add_argument("--benchmark", action="store_true", help="Record per-step wall-clock times")
    run.add_argument("--no-cache", action="store_true", help="Disable the reference solution cache")

    toeplitz = subparsers.add_parser("experiment-toeplitz-bound", help="Rank-one bound on Toeplitz matrices")
    toeplitz.add_argument("--out", default="toeplitz_bound.csv", help="Output CSV path")
    toeplitz.add_argument("--seed", type=_seed, default=21, help="Seed of the perturbation vector")

    growth = subparsers.add_parser("experiment-eigvec-growth", help="Eigenvector growth of outlying eigenvalues")
    growth.add_argument("--out", default="eigvec_growth.csv", help="Output CSV path")
    growth.add_argument("--seed", type=_seed, default=21, help="Seed of the perturbation vector")

    condiff = subparsers.add_parser("experiment-condiff", help="Variant comparison on convection-diffusion")
    condiff.add_argument("--out", default="condiff.csv", help="Base path of the output CSVs")
    condiff.add_argument("--seed", type=_seed, default=0, help="Seed of the embedding")
    condiff.add_argument("--sketch-kind", choices=[k.label for k in SketchKind], default=SketchKind.SPARSE_SIGN.label)
    condiff.add_argument("--sketch-dim", type=int, default=400, help="Sketch dimension")
    condiff.add_argument("--dmax", type=int, default=240, help="Largest Krylov dimension")
    condiff.add_argument("--no-cache", action="store_true", help="Disable the reference solution cache")
    return parser.parse_args()


def build_config(args: argparse.Namespace, threads=None) -> RunConfig:
    """Translate ``run`` arguments into a validated :class:`RunConfig`."""
    try:
        return RunConfig(
            matrix_path=Path(args.matrix) if args.matrix else None,
            generator=args.gen,
            gen_args=parse_gen_args(args.gen_args),
            d_max=args.dmax,
            trunc_k=args.trunc_k,
            sketch_kind=SketchKind.parse(args.sketch_kind),
            sketch_dim=args.sketch_dim,
            seed=args.seed,
            variants=parse_variants(args.variant),
            function=args.func,
            reference=ReferenceMode(args.ref),
            out=Path(args.out),
            diag_stride=args.diag_stride,
            agreement_window=args.agreement_window,
            record_timing=args.benchmark,
            use_cache=not args.no_cache,
            threads=threads,
        ).validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _failures_path(out: Path) -> Path:
    return Path(f"{out}.failures.json")


def _report_failures(command: str, out: Path, records: List[AssertionRecord]):
    path = _failures_path(out)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(failure_report(command, records), handle, indent=2)
    failed = sum(1 for record in records if not record.passed)
    print(f"{failed} assertion(s) failed, see {path}")
    raise SystemExit(1)


def main() -> None:
    """Entry point for the CLI."""
    # Load environment variables from .env file
    load_dotenv()

    args = parse_args()

    # Setup logging
    log_path = args.log or os.getenv("KRYLOV_LOG_FILE")
    setup_logger(Path(log_path) if log_path else None, enable_colors=not args.no_color, verbosity=args.verbose)

    try:
        threads = sketch_threads()
        if args.command == "run":
            config = build_config(args, threads)
            trace = cmd_run(config)
            command, out, records = "run", config.out, trace.assertions
        elif args.command == "experiment-toeplitz-bound":
            result = cmd_experiment_toeplitz_bound(Path(args.out), seed=args.seed)
            command, out, records = result.command, Path(args.out), result.assertions
        elif args.command == "experiment-eigvec-growth":
            result = cmd_experiment_eigvec_growth(Path(args.out), seed=args.seed)
            command, out, records = result.command, Path(args.out), result.assertions
        else:
            result = cmd_experiment_condiff(
                Path(args.out),
                seed=args.seed,
                sketch_kind=SketchKind.parse(args.sketch_kind),
                sketch_dim=args.sketch_dim,
                d_max=args.dmax,
                use_cache=not args.no_cache,
                threads=threads,
            )
            command, out, records = result.command, Path(args.out), result.assertions
    except (ConfigError, MatrixFormatError, ExperimentError, ValueError) as exc:
        print(f"Error: {exc}")
        raise SystemExit(2) from exc

    if not all(record.passed for record in records):
        _report_failures(command, out, records)


if __name__ == "__main__":
    main()
