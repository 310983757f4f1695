"""Data models for runs, traces and experiment assertions."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .functions import available_functions
from .matfun import Variant
from .sketch import SketchKind

GENERATORS = ("condiff", "toeplitz")
TRACE_COLUMNS = (
    "d", "variant", "rel_error", "kappa_Ud", "kappa_Td", "epsilon_hat", "norm_r", "tau_ratio", "wallclock_ms"
)


class ConfigError(ValueError):
    """Raised when a run configuration is invalid."""


class ReferenceMode(str, Enum):
    AUTO = "auto"
    DENSE = "dense"
    LONG_FOM = "long-fom"


@dataclass
class RunConfig:
    """Everything needed to reproduce a convergence run."""

    matrix_path: Optional[Path] = None
    generator: Optional[str] = None
    gen_args: Dict[str, Union[int, float]] = field(default_factory=dict)
    d_max: int = 50
    trunc_k: int = 2
    sketch_kind: SketchKind = SketchKind.SPARSE_SIGN
    sketch_dim: Optional[int] = None
    seed: int = 0
    variants: List[Variant] = field(default_factory=lambda: list(Variant))
    function: str = "exp"
    reference: ReferenceMode = ReferenceMode.AUTO
    out: Optional[Path] = None
    diag_stride: int = 10
    agreement_window: int = 0
    record_timing: bool = False
    use_cache: bool = True
    threads: Optional[int] = None

    @property
    def effective_sketch_dim(self) -> int:
        return self.sketch_dim if self.sketch_dim is not None else 2 * self.d_max

    @property
    def sketched(self) -> bool:
        return any(v.sketched for v in self.variants)

    def validate(self) -> "RunConfig":
        """Check the configuration and return it, raising :class:`ConfigError` on the first problem."""
        if (self.matrix_path is None) == (self.generator is None):
            raise ConfigError("exactly one of a matrix file or a generator must be given")
        if self.generator is not None and self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator '{self.generator}', choose from {', '.join(GENERATORS)}")
        if self.matrix_path is not None and not Path(self.matrix_path).is_file():
            raise ConfigError(f"matrix file not found: {self.matrix_path}")
        if self.d_max < 1:
            raise ConfigError(f"d_max must be at least 1, got {self.d_max}")
        if self.trunc_k < 0:
            raise ConfigError(f"truncation length must be non-negative (0 = full), got {self.trunc_k}")
        if not self.variants:
            raise ConfigError("at least one variant is required")
        if self.sketched and self.effective_sketch_dim < 1:
            raise ConfigError(f"sketch dimension must be at least 1, got {self.effective_sketch_dim}")
        if self.function not in available_functions():
            raise ConfigError(f"unknown function '{self.function}', choose from {', '.join(available_functions())}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.diag_stride < 1:
            raise ConfigError(f"diagnostic stride must be positive, got {self.diag_stride}")
        if self.agreement_window < 0:
            raise ConfigError(f"agreement window must be non-negative, got {self.agreement_window}")
        if self.threads is not None and self.threads < 1:
            raise ConfigError(f"thread count must be positive, got {self.threads}")
        return self

    def source_label(self) -> str:
        if self.matrix_path is not None:
            return str(self.matrix_path)
        args = ",".join(f"{key}={value}" for key, value in sorted(self.gen_args.items()))
        return f"{self.generator}({args})"

    def to_header(self) -> Dict[str, Any]:
        """JSON-serializable description used as CSV metadata."""
        return {
            "matrix": str(self.matrix_path) if self.matrix_path is not None else None,
            "generator": self.generator,
            "gen_args": dict(sorted(self.gen_args.items())),
            "d_max": self.d_max,
            "trunc_k": self.trunc_k,
            "sketch_kind": self.sketch_kind.label,
            "sketch_dim": self.effective_sketch_dim,
            "seed": self.seed,
            "variants": [v.value for v in self.variants],
            "function": self.function,
            "reference": self.reference.value,
            "diag_stride": self.diag_stride,
            "agreement_window": self.agreement_window,
        }


def _format(value: float) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(float(value))
    return str(value)


@dataclass
class TraceRow:
    d: int
    variant: str
    rel_error: float
    kappa_Ud: float = math.nan
    kappa_Td: float = math.nan
    epsilon_hat: float = math.nan
    norm_r: float = math.nan
    tau_ratio: float = math.nan
    wallclock_ms: float = 0.0

    def as_csv_row(self) -> List[str]:
        return [_format(getattr(self, name)) for name in TRACE_COLUMNS]


@dataclass
class ConvergenceTrace:
    """Per-step rows for every variant of a run, plus free-form notes."""

    rows: List[TraceRow] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    metadata: Dict[str, Any] = field(default_factory=dict)
    assertions: List["AssertionRecord"] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(record.passed for record in self.assertions)

    def add(self, row: TraceRow):
        if row.rel_error < 0 or math.isnan(row.rel_error):
            raise ValueError(f"relative error must be a non-negative number, got {row.rel_error}")
        previous = [r.d for r in self.rows if r.variant == row.variant]
        if previous and row.d <= previous[-1]:
            raise ValueError(f"rows for '{row.variant}' must have increasing d ({row.d} after {previous[-1]})")
        self.rows.append(row)

    def variants(self) -> List[str]:
        seen: Dict[str, None] = {}
        for row in self.rows:
            seen.setdefault(row.variant, None)
        return list(seen)

    def for_variant(self, variant: Union[str, Variant]) -> List[TraceRow]:
        name = variant.value if isinstance(variant, Variant) else variant
        return [row for row in self.rows if row.variant == name]

    def errors(self, variant: Union[str, Variant]) -> Dict[int, float]:
        return {row.d: row.rel_error for row in self.for_variant(variant)}

    def write_csv(self, path: Path, variants: Optional[Iterable[str]] = None):
        """Write rows (optionally only ``variants``) with a ``#`` metadata line and trailing notes."""
        keep = set(variants) if variants is not None else None
        rows = [row.as_csv_row() for row in self.rows if keep is None or row.variant in keep]
        write_csv_table(path, TRACE_COLUMNS, rows, self.metadata, self.notes)


def write_csv_table(
    path: Path,
    columns: Sequence[str],
    rows: Iterable[Sequence[Any]],
    metadata: Dict[str, Any],
    notes: Sequence[str] = (),
):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("# " + json.dumps(metadata, sort_keys=True) + "\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(value) for value in row])
        for note in notes:
            handle.write(f"# note: {note}\n")


def read_csv_table(path: Path) -> Tuple[Dict[str, Any], List[Dict[str, str]], List[str]]:
    """Read a table written by :func:`write_csv_table`: metadata, rows as dicts, notes."""
    metadata: Dict[str, Any] = {}
    notes: List[str] = []
    body: List[str] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.startswith("# note: "):
                notes.append(line[len("# note: "):].rstrip("\n"))
            elif line.startswith("# ") and not metadata and not body:
                metadata = json.loads(line[2:])
            else:
                body.append(line)
    rows = list(csv.DictReader(body))
    return metadata, rows, notes


@dataclass
class AssertionRecord:
    """Outcome of one experiment check."""

    name: str
    passed: bool
    detail: str = ""


@dataclass
class ExperimentResult:
    """Files written by an experiment and the checks it made."""

    command: str
    outputs: List[Path] = field(default_factory=list)
    assertions: List[AssertionRecord] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(record.passed for record in self.assertions)


def failure_report(command: str, records: Sequence[AssertionRecord]) -> Dict[str, Any]:
    failed = [asdict(record) for record in records if not record.passed]
    return {
        "command": command,
        "passed": not failed,
        "checked": len(records),
        "failures": failed,
    }
