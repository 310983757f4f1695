"""Sketched and truncated Krylov approximation of matrix functions."""

__version__ = "1.0.0"

__all__ = [
    "RunConfig",
    "ConvergenceTrace",
    "SparseMatrix",
    "cmd_run",
    "fom_approx",
    "trfom_approx",
    "sfom_approx",
    "rank_one_report",
    "make_embedding",
]

from .core import cmd_run
from .matfun import fom_approx, rank_one_report, sfom_approx, trfom_approx
from .models import ConvergenceTrace, RunConfig
from .sketch import make_embedding
from .sparse import SparseMatrix
