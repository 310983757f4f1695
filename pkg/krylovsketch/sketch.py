"""Oblivious subspace embeddings: construction, application and measured distortion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse

from .utils import sketch_threads

ORTHONORMALITY_TOL = 1e-10
SPARSE_SIGN_NNZ = 8


class EmbeddingError(ValueError):
    """Raised when an embedding cannot be built or applied."""


class SketchKind(str, Enum):
    GAUSSIAN = "gaussian"
    SPARSE_SIGN = "sparse_sign"
    SRDCT = "srdct"

    @classmethod
    def parse(cls, text: str) -> "SketchKind":
        """Accept ``sparse-sign`` and ``sparse_sign`` spellings."""
        try:
            return cls(text.strip().lower().replace("-", "_"))
        except ValueError:
            choices = ", ".join(kind.label for kind in cls)
            raise ValueError(f"unknown sketch kind '{text}', choose from {choices}") from None

    @property
    def label(self) -> str:
        return self.value.replace("_", "-")


@dataclass(frozen=True, eq=False)
class Embedding:
    """A random ``s x n`` embedding, reproducible from ``(kind, s, n, seed)``."""

    kind: SketchKind
    s: int
    n: int
    seed: int
    zeta: Optional[int] = None
    _dense: Optional[np.ndarray] = field(default=None, repr=False)
    _sparse: Optional[scipy.sparse.csc_matrix] = field(default=None, repr=False)
    _signs: Optional[np.ndarray] = field(default=None, repr=False)
    _rows: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def shape(self):
        return (self.s, self.n)

    def to_header(self) -> Dict[str, Any]:
        header = {"kind": self.kind.label, "s": self.s, "n": self.n, "seed": self.seed}
        if self.zeta is not None:
            header["zeta"] = self.zeta
        return header

    def apply(self, x, threads: Optional[int] = None) -> np.ndarray:
        return sketch_apply(self, x, threads=threads)


def make_embedding(kind, s: int, n: int, seed: int) -> Embedding:
    """Draw an embedding from ``numpy.random.default_rng(seed)``.

    gaussian
        i.i.d. ``N(0, 1/s)`` entries.
    sparse_sign
        ``zeta = min(8, s)`` entries ``+-1/sqrt(zeta)`` per column in
        distinct rows.
    srdct
        ``sqrt(n/s)`` times ``s`` sampled rows of the orthonormal DCT-II
        applied after a random sign flip.
    """
    kind = kind if isinstance(kind, SketchKind) else SketchKind.parse(kind)
    if s < 1 or n < 1:
        raise EmbeddingError(f"embedding dimensions must be positive, got s={s}, n={n}")
    if s > n:
        raise EmbeddingError(f"sketch dimension s={s} exceeds ambient dimension n={n}")
    if seed < 0:
        raise EmbeddingError(f"seed must be non-negative, got {seed}")

    rng = np.random.default_rng(seed)
    if kind is SketchKind.GAUSSIAN:
        matrix = rng.standard_normal((s, n)) / math.sqrt(s)
        return Embedding(kind, s, n, seed, _dense=matrix)

    if kind is SketchKind.SPARSE_SIGN:
        zeta = min(SPARSE_SIGN_NNZ, s)
        rows = np.concatenate([np.sort(rng.choice(s, zeta, replace=False)) for _ in range(n)])
        values = rng.choice([-1.0, 1.0], size=n * zeta) / math.sqrt(zeta)
        indptr = np.arange(0, n * zeta + 1, zeta)
        matrix = scipy.sparse.csc_matrix((values, rows, indptr), shape=(s, n))
        return Embedding(kind, s, n, seed, zeta=zeta, _sparse=matrix)

    signs = rng.choice([-1.0, 1.0], size=n)
    rows = np.sort(rng.choice(n, s, replace=False))
    return Embedding(kind, s, n, seed, _signs=signs, _rows=rows)


def sketch_apply(S: Embedding, x, threads: Optional[int] = None) -> np.ndarray:
    """Return ``S @ x`` for a vector or for the columns of a matrix."""
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[0] != S.n:
        raise EmbeddingError(f"cannot sketch operand of shape {x.shape} with an embedding of width {S.n}")

    if S.kind is SketchKind.GAUSSIAN:
        return S._dense @ x
    if S.kind is SketchKind.SPARSE_SIGN:
        return S._sparse @ x

    workers = threads if threads is not None else sketch_threads()
    signs = S._signs if x.ndim == 1 else S._signs[:, None]
    mixed = scipy.fft.dct(signs * x, type=2, norm="ortho", axis=0, workers=workers)
    return math.sqrt(S.n / S.s) * mixed[S._rows]


def to_dense(S: Embedding) -> np.ndarray:
    """Materialize ``S`` as a dense array (for small ``n`` only)."""
    if S.kind is SketchKind.GAUSSIAN:
        return S._dense.copy()
    if S.kind is SketchKind.SPARSE_SIGN:
        return S._sparse.toarray()
    return sketch_apply(S, np.eye(S.n))


def estimate_epsilon(S: Embedding, V) -> float:
    """Measured distortion ``max(1 - sigma_min^2, sigma_max^2 - 1)`` of ``S`` on ``range(V)``.

    ``V`` must have orthonormal columns.
    """
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[1] == 0:
        return 0.0
    gram_error = np.linalg.norm(V.T @ V - np.eye(V.shape[1]))
    if gram_error > ORTHONORMALITY_TOL:
        raise ValueError(f"columns are not orthonormal (||V^T V - I|| = {gram_error:.2e})")
    sigma = scipy.linalg.svdvals(sketch_apply(S, V))
    if sigma.size < V.shape[1]:
        return 1.0
    return float(max(1.0 - sigma.min() ** 2, sigma.max() ** 2 - 1.0))


def whitening_bound(epsilon: float) -> float:
    """``sqrt((1 + eps)/(1 - eps))``, infinite once ``eps >= 1``."""
    if epsilon >= 1.0:
        return math.inf
    return math.sqrt((1.0 + epsilon) / (1.0 - epsilon))
