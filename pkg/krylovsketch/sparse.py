"""Sparse operator storage, products and test-matrix generators."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse


class MatrixFormatError(ValueError):
    """Raised when a matrix file cannot be parsed or uses an unsupported format."""


class DimensionMismatchError(ValueError):
    """Raised when operand dimensions do not agree."""


_SUPPORTED_FIELDS = ("real", "integer")
_SUPPORTED_SYMMETRY = ("general", "symmetric")


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Real matrix in compressed sparse row form.

    The CSR arrays are validated and frozen on construction; products are
    delegated to :class:`scipy.sparse.csr_matrix`, whose row kernel sums each
    row left to right in storage order.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offsets = np.array(self.row_offsets, dtype=np.int64)
        cols = np.array(self.col_indices, dtype=np.int64)
        vals = np.array(self.values, dtype=float)

        if offsets.shape != (self.n_rows + 1,):
            raise MatrixFormatError(f"row_offsets must have length {self.n_rows + 1}, got {offsets.shape[0]}")
        if offsets[0] != 0 or np.any(np.diff(offsets) < 0):
            raise MatrixFormatError("row_offsets must start at 0 and be non-decreasing")
        if offsets[-1] != vals.shape[0] or cols.shape != vals.shape:
            raise MatrixFormatError("row_offsets, col_indices and values disagree on the number of entries")
        if cols.size and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise MatrixFormatError(f"column index out of range [0, {self.n_cols})")
        if not np.all(np.isfinite(vals)):
            raise MatrixFormatError("matrix values must be finite")

        # columns strictly increase inside a row; row starts are exempt
        if cols.size > 1:
            inside = np.ones(cols.size - 1, dtype=bool)
            starts = offsets[1:-1]
            starts = starts[(starts > 0) & (starts < cols.size)]
            inside[starts - 1] = False
            if np.any(np.diff(cols)[inside] <= 0):
                raise MatrixFormatError("column indices must be strictly increasing within each row")

        object.__setattr__(self, "row_offsets", _readonly(offsets))
        object.__setattr__(self, "col_indices", _readonly(cols))
        object.__setattr__(self, "values", _readonly(vals))
        csr = scipy.sparse.csr_matrix(
            (vals.copy(), cols.copy(), offsets.copy()), shape=(self.n_rows, self.n_cols)
        )
        csr.has_sorted_indices = True
        object.__setattr__(self, "_csr", csr)

    @classmethod
    def from_scipy(cls, matrix) -> "SparseMatrix":
        """Build from any scipy sparse matrix, summing duplicates and sorting rows."""
        csr = scipy.sparse.csr_matrix(matrix, dtype=float, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data)

    @classmethod
    def from_dense(cls, array) -> "SparseMatrix":
        return cls.from_scipy(scipy.sparse.csr_matrix(np.asarray(array, dtype=float)))

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def to_scipy(self) -> scipy.sparse.csr_matrix:
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self._csr.T)

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_offsets)


def as_vector(values, allow_complex: bool = True) -> np.ndarray:
    """Return ``values`` as a finite one-dimensional array."""
    vector = np.asarray(values)
    if vector.ndim != 1:
        raise ValueError(f"expected a one-dimensional vector, got shape {vector.shape}")
    if np.iscomplexobj(vector):
        if not allow_complex:
            raise ValueError("expected a real vector")
    else:
        vector = vector.astype(float, copy=False)
    if not np.all(np.isfinite(vector)):
        raise ValueError("vector entries must be finite")
    return vector


def spmv(A: SparseMatrix, x) -> np.ndarray:
    """Return ``A @ x`` for a vector or a block of column vectors."""
    x = np.asarray(x)
    if x.ndim not in (1, 2) or x.shape[0] != A.n_cols:
        raise DimensionMismatchError(f"cannot multiply {A.n_rows}x{A.n_cols} matrix with operand of shape {x.shape}")
    return A.to_scipy() @ x


def estimate_norm(A: SparseMatrix, steps: int = 5, seed: int = 0) -> float:
    """Estimate ``||A||_2`` with a few power-iteration steps on ``A^T A``."""
    csr = A.to_scipy()
    x = np.random.default_rng(seed).standard_normal(A.n_cols)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(steps):
        y = csr.T @ (csr @ x)
        y_norm = np.linalg.norm(y)
        if y_norm == 0.0:
            return 0.0
        estimate = np.sqrt(y_norm)
        x = y / y_norm
    return float(estimate)


def gen_condiff(N: int, nu: float, wind: bool = True) -> SparseMatrix:
    """Centered finite-difference matrix of ``-nu*Lap(u) + w.grad(u)`` on the unit square.

    Parameters
    ----------
    N: int
        Interior grid points per side, the matrix has order ``N**2``.
    nu: float
        Viscosity.
    wind: bool
        When ``False`` the convection term is dropped, leaving the symmetric
        scaled Laplacian.

    Returns
    -------
    SparseMatrix
        Dirichlet problem on the interior nodes ``(i*h, j*h)``, ``h = 1/(N+1)``,
        numbered lexicographically with ``x`` running fastest. The wind field
        is ``w = (3/2 y (1 - x^2), -3 x (1 - y^2))``.
    """
    if N < 3:
        raise ValueError(f"gen_condiff needs N >= 3, got {N}")
    if nu <= 0:
        raise ValueError(f"viscosity must be positive, got {nu}")

    h = 1.0 / (N + 1)
    ident = scipy.sparse.identity(N, format="csr")
    second = scipy.sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(N, N)) / h**2
    laplace = scipy.sparse.kron(ident, second) + scipy.sparse.kron(second, ident)
    matrix = nu * laplace

    if wind:
        grid = np.arange(1, N + 1) * h
        x, y = np.meshgrid(grid, grid)
        w1 = 1.5 * y * (1.0 - x**2)
        w2 = -3.0 * x * (1.0 - y**2)
        first = scipy.sparse.diags([-1.0, 1.0], [-1, 1], shape=(N, N)) / (2.0 * h)
        matrix = (
            matrix
            + scipy.sparse.diags(w1.ravel()) @ scipy.sparse.kron(ident, first)
            + scipy.sparse.diags(w2.ravel()) @ scipy.sparse.kron(first, ident)
        )
    return SparseMatrix.from_scipy(matrix)


def gen_toeplitz(d: int) -> np.ndarray:
    """Dense Toeplitz test matrix with diagonal -4, subdiagonal 2 and two superdiagonals 1/2."""
    if d < 4:
        raise ValueError(f"gen_toeplitz needs d >= 4, got {d}")
    column = np.zeros(d)
    column[:2] = (-4.0, 2.0)
    row = np.zeros(d)
    row[:3] = (-4.0, 0.5, 0.5)
    return scipy.linalg.toeplitz(column, row)


def read_matrix_market(path: Union[str, Path]) -> SparseMatrix:
    """Read a coordinate real general or symmetric Matrix Market file."""
    path = Path(path)
    try:
        _, _, _, fmt, field, symmetry = scipy.io.mminfo(str(path))
    except (ValueError, IndexError, RuntimeError) as exc:
        raise MatrixFormatError(f"{path}: not a Matrix Market file ({exc})") from exc
    if fmt != "coordinate":
        raise MatrixFormatError(f"{path}: only coordinate format is supported, got '{fmt}'")
    if field not in _SUPPORTED_FIELDS:
        raise MatrixFormatError(f"{path}: unsupported field type '{field}'")
    if symmetry not in _SUPPORTED_SYMMETRY:
        raise MatrixFormatError(f"{path}: unsupported symmetry '{symmetry}'")
    try:
        matrix = scipy.io.mmread(str(path))
    except (ValueError, IndexError, TypeError, RuntimeError) as exc:
        raise MatrixFormatError(f"{path}: could not parse entries ({exc})") from exc
    return SparseMatrix.from_scipy(matrix)


def write_matrix_market(path: Union[str, Path], A: SparseMatrix, comment: str = "") -> None:
    """Write ``A`` in coordinate real general format with round-trip precision."""
    with open(path, "wb") as handle:
        scipy.io.mmwrite(handle, A.to_scipy(), comment=comment, field="real", precision=17, symmetry="general")
