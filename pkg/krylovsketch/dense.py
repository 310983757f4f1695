"""Dense kernels for small matrices.

Thin QR with column appends, Schur-based eigendecompositions, the scaling
and squaring matrix exponential, divided differences, and sampled fields of
values. Everything here works on the ``d x d`` (or ``s x d``) projected
quantities of a Krylov run, never on the large operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence, Tuple

import numpy as np
import scipy.linalg

from .logger import get_logger

if TYPE_CHECKING:
    from .functions import ScalarFunction

RANK_TOL = 1e-14
CONFLUENCE_TOL = 1e-8
DEFECT_TOL = 1e-12
HESSENBERG_TOL = 1e-14
COLLISION_TOL = 1e-10
MIN_FOV_ANGLES = 8

_EPS = np.finfo(float).eps
_TINY = np.finfo(float).tiny


class EigenConvergenceError(RuntimeError):
    """Raised when an eigendecomposition produces non-finite output."""


class IllConditionedError(RuntimeError):
    """Raised when an eigenvector basis is too ill-conditioned to use."""


class ExpmOverflowError(OverflowError):
    """Raised when the matrix exponential overflows during squaring."""

    def __init__(self, scaling_power: int, norm1: float):
        self.scaling_power = scaling_power
        self.norm1 = norm1
        super().__init__(f"matrix exponential overflowed after {scaling_power} squarings (||A||_1 = {norm1:.3e})")


class SingularResolventError(ValueError):
    """Raised when ``M - lambda*I`` is numerically singular for a divided-difference node."""


class NodeCollisionError(ValueError):
    """Raised when divided-difference nodes that must be distinct coincide."""


def _require_square(M: np.ndarray, name: str = "matrix") -> int:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    return M.shape[0]


def real_if_negligible(F: np.ndarray, tol: float = CONFLUENCE_TOL) -> np.ndarray:
    """Drop an imaginary part that is below ``tol`` relative to ``F``."""
    if not np.iscomplexobj(F):
        return F
    total = np.linalg.norm(F)
    if np.linalg.norm(F.imag) <= tol * total:
        return F.real.copy()
    return F


def is_upper_hessenberg(M: np.ndarray, tol: float = HESSENBERG_TOL) -> bool:
    M = np.asarray(M)
    if M.shape[0] < 3:
        return True
    return bool(np.max(np.abs(np.tril(M, -2))) <= tol * max(np.linalg.norm(M), _TINY))


# --- QR -------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QRFactors:
    """Thin QR factors ``B = Q T`` with ``diag(T) >= 0``.

    ``deficient_columns`` lists the (0-based) columns whose new direction was
    below the rank tolerance when they were factored.
    """

    Q: np.ndarray
    T: np.ndarray
    deficient_columns: Tuple[int, ...] = ()

    @property
    def n_columns(self) -> int:
        return self.T.shape[1]

    @property
    def rank_deficient(self) -> bool:
        return bool(self.deficient_columns)


def empty_qr(n_rows: int) -> QRFactors:
    return QRFactors(np.zeros((n_rows, 0)), np.zeros((0, 0)), ())


def thin_qr(B) -> QRFactors:
    """Householder thin QR of a tall matrix with a non-negative diagonal in ``T``."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2:
        raise ValueError(f"thin_qr needs a matrix, got shape {B.shape}")
    n, m = B.shape
    if m == 0:
        return empty_qr(n)
    if n < m:
        raise ValueError(f"thin_qr needs at least as many rows as columns, got {B.shape}")

    Q, T = scipy.linalg.qr(B, mode="economic")
    signs = np.sign(np.diag(T))
    signs[signs == 0] = 1.0
    Q = Q * signs
    T = signs[:, None] * T

    threshold = RANK_TOL * np.linalg.norm(B)
    deficient = tuple(int(j) for j in np.flatnonzero(np.abs(np.diag(T)) <= threshold))
    return QRFactors(Q, T, deficient)


def qr_append_column(factors: QRFactors, b) -> QRFactors:
    """Return the factors of ``[B, b]`` given those of ``B``.

    Uses classical Gram-Schmidt with one reorthogonalization pass.
    """
    Q, T = factors.Q, factors.T
    n, m = Q.shape
    b = np.asarray(b, dtype=float)
    if b.shape != (n,):
        raise ValueError(f"appended column must have length {n}, got shape {b.shape}")
    if m >= n:
        raise ValueError(f"cannot append a column to a {n}x{m} factorization")

    t = Q.T @ b
    w = b - Q @ t
    c = Q.T @ w
    w -= Q @ c
    t += c
    tau = float(np.linalg.norm(w))

    deficient = factors.deficient_columns
    if tau <= RANK_TOL * np.linalg.norm(b):
        deficient = deficient + (m,)
    q = w / tau if tau > 0 else np.zeros(n)

    T_new = np.zeros((m + 1, m + 1))
    T_new[:m, :m] = T
    T_new[:m, m] = t
    T_new[m, m] = tau
    return QRFactors(np.column_stack([Q, q]), T_new, deficient)


# --- Eigendecomposition ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class SchurForm:
    Z: np.ndarray
    R: np.ndarray


def real_schur(M) -> SchurForm:
    """Real Schur form ``M = Z R Z^T`` with 1x1 and 2x2 diagonal blocks."""
    M = np.asarray(M, dtype=float)
    _require_square(M)
    try:
        R, Z = scipy.linalg.schur(M, output="real")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenConvergenceError(f"Schur decomposition failed: {exc}") from exc
    return SchurForm(Z, R)


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    """``M = X diag(lambdas) Xinv`` with unit-norm columns in ``X``."""

    X: np.ndarray
    lambdas: np.ndarray
    Xinv: np.ndarray
    defective: bool
    min_gap: float

    @property
    def alphas(self) -> np.ndarray:
        """Last components of the right eigenvectors."""
        return self.X[-1, :]

    @property
    def betas(self) -> np.ndarray:
        """First components of the left eigenvectors (first column of ``Xinv``)."""
        return self.Xinv[:, 0]

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.X))


def _triangular_eigvecs(T: np.ndarray) -> np.ndarray:
    n = T.shape[0]
    X = np.zeros((n, n), dtype=complex)
    smin = max(_EPS * np.linalg.norm(T, 1), _TINY)
    for k in range(n):
        X[k, k] = 1.0
        if k == 0:
            continue
        shifted = T[:k, :k] - T[k, k] * np.eye(k)
        pivots = np.diagonal(shifted).copy()
        small = np.abs(pivots) < smin
        if np.any(small):
            # perturb tiny pivots so repeated eigenvalues still give a vector
            idx = np.flatnonzero(small)
            shifted[idx, idx] = smin
        X[:k, k] = scipy.linalg.solve_triangular(shifted, -T[:k, k])
    return X


def _normalize_columns(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=0)
    norms[norms == 0] = 1.0
    X = X / norms
    # largest entry of each column becomes real and positive
    lead = X[np.argmax(np.abs(X), axis=0), np.arange(X.shape[1])]
    phases = np.where(lead == 0, 1.0, lead / np.abs(np.where(lead == 0, 1.0, lead)))
    return X / phases


def eig_decompose(M, balance: bool = False) -> EigenDecomposition:
    """Eigendecomposition of a small dense matrix through its Schur form.

    For real input, eigenvectors of complex-conjugate eigenvalue pairs are
    computed once and conjugated, so pairs are exact conjugates. Nearly
    coincident eigenvalues are reported through ``defective`` rather than
    raised.
    """
    M = np.asarray(M)
    n = _require_square(M)
    if n == 0:
        empty = np.zeros((0, 0), dtype=complex)
        return EigenDecomposition(empty, np.zeros(0, dtype=complex), empty, False, math.inf)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix entries must be finite")

    work = M
    scale = None
    if balance:
        work, (scale, _) = scipy.linalg.matrix_balance(M, permute=False, separate=True)

    try:
        if np.isrealobj(work):
            R, Z = scipy.linalg.schur(work.astype(float), output="real")
            T, Z = scipy.linalg.rsf2csf(R, Z)
            pairs = [i for i in range(n - 1) if R[i + 1, i] != 0.0]
        else:
            T, Z = scipy.linalg.schur(work, output="complex")
            pairs = None
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenConvergenceError(f"Schur decomposition failed: {exc}") from exc

    lambdas = np.diag(T).astype(complex)
    X = Z @ _triangular_eigvecs(T)
    if scale is not None:
        X = scale[:, None] * X
    X = _normalize_columns(X)

    if pairs is not None:
        paired = set()
        for i in pairs:
            p, q = (i, i + 1) if lambdas[i].imag > 0 else (i + 1, i)
            lambdas[q] = np.conj(lambdas[p])
            X[:, q] = np.conj(X[:, p])
            paired.update((p, q))
        for j in range(n):
            if j not in paired:
                lambdas[j] = lambdas[j].real
                X[:, j] = X[:, j].real

    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(lambdas))):
        raise EigenConvergenceError("eigendecomposition produced non-finite values")

    try:
        Xinv = scipy.linalg.inv(X)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise IllConditionedError(f"eigenvector matrix is singular: {exc}") from exc

    if n > 1:
        gaps = np.abs(lambdas[:, None] - lambdas[None, :])
        gaps[np.diag_indices(n)] = np.inf
        min_gap = float(gaps.min())
    else:
        min_gap = math.inf
    defective = min_gap < DEFECT_TOL * max(np.linalg.norm(M, 2), _TINY)
    if defective:
        get_logger().log_warning(f"eigenvalues coincide to {min_gap:.2e}; matrix may be defective")

    return EigenDecomposition(X, lambdas, Xinv, bool(defective), min_gap)


def hessenberg_eig(M, balance: bool = False) -> EigenDecomposition:
    """:func:`eig_decompose` for an upper Hessenberg matrix."""
    M = np.asarray(M)
    _require_square(M)
    if not is_upper_hessenberg(M):
        raise ValueError("matrix is not upper Hessenberg")
    return eig_decompose(M, balance=balance)


# --- Matrix exponential ---------------------------------------------------

THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


def _pade_coefficients(m: int):
    f = math.factorial
    return [f(2 * m - j) * f(m) / (f(2 * m) * f(j) * f(m - j)) for j in range(m + 1)]


def _pade_low(A: np.ndarray, m: int, ident: np.ndarray):
    b = _pade_coefficients(m)
    A2 = A @ A
    evens = [ident]
    for _ in range((m - 1) // 2):
        evens.append(evens[-1] @ A2)
    U = A @ sum(b[2 * i + 1] * P for i, P in enumerate(evens))
    V = sum(b[2 * i] * P for i, P in enumerate(evens))
    return U, V


def _pade13(A: np.ndarray, ident: np.ndarray):
    b = _pade_coefficients(13)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2) + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * ident)
    V = A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2) + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * ident
    return U, V


def expm_scaling_power(A) -> int:
    """Number of squarings the degree-13 approximant needs for ``A``."""
    norm1 = np.linalg.norm(np.asarray(A), 1)
    if norm1 <= THETA[13]:
        return 0
    return max(0, int(math.ceil(math.log2(norm1 / THETA[13]))))


def expm(A) -> np.ndarray:
    """Matrix exponential by scaling and squaring with Pade approximants.

    Degrees 3, 5, 7, 9 are used when ``||A||_1`` is small enough; otherwise
    ``A`` is scaled by ``2**-s`` into the degree-13 range and the result is
    squared ``s`` times.
    """
    A = np.asarray(A)
    n = _require_square(A)
    dtype = np.result_type(A.dtype, float)
    ident = np.eye(n, dtype=dtype)
    if n == 0:
        return ident
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    norm1 = np.linalg.norm(A, 1)
    if norm1 == 0.0:
        return ident

    for m in (3, 5, 7, 9):
        if norm1 <= THETA[m]:
            U, V = _pade_low(A, m, ident)
            return scipy.linalg.solve(V - U, V + U)

    s = expm_scaling_power(A)
    get_logger().log_debug(f"expm: ||A||_1={norm1:.3e}, squarings={s}")
    U, V = _pade13(A / 2.0**s, ident)
    R = scipy.linalg.solve(V - U, V + U)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(s):
            R = R @ R
    if not np.all(np.isfinite(R)):
        raise ExpmOverflowError(s, norm1)
    return R


def expm_rank_one_difference(M, w) -> np.ndarray:
    """``expm(M + w e_d^T) e_1 - expm(M) e_1`` without subtracting the two exponentials.

    With ``E = w e_d^T / ||w||_1`` the top-right block of
    ``expm([[M + w e_d^T, E], [0, M]])`` equals the difference of the two
    exponentials divided by ``||w||_1``. Differences far below ``||expm(M)||``
    keep their relative accuracy.
    """
    M = np.asarray(M)
    d = _require_square(M)
    w = np.asarray(w)
    if w.shape != (d,):
        raise ValueError(f"need a vector of length {d}, got shape {w.shape}")
    dtype = np.result_type(M.dtype, w.dtype, float)
    scale = float(np.linalg.norm(w, 1))
    if d == 0 or scale == 0.0:
        return np.zeros(d, dtype=dtype)

    block = np.zeros((2 * d, 2 * d), dtype=dtype)
    block[:d, :d] = M
    block[:d, d - 1] += w
    block[:d, 2 * d - 1] = w / scale
    block[d:, d:] = M
    return scale * expm(block)[:d, d]


def expm_via_schur(A) -> np.ndarray:
    """``expm`` applied to the Schur factor: ``Z expm(R) Z^H``."""
    A = np.asarray(A)
    _require_square(A)
    if np.iscomplexobj(A):
        R, Z = scipy.linalg.schur(A, output="complex")
        return Z @ expm(R) @ Z.conj().T
    form = real_schur(A)
    return form.Z @ expm(form.R) @ form.Z.T


def funm_eig(M, f: "ScalarFunction") -> np.ndarray:
    """Evaluate ``f(M)`` by Hessenberg reduction and eigendecomposition."""
    M = np.asarray(M)
    n = _require_square(M)
    if n == 0:
        return np.zeros((0, 0), dtype=M.dtype)

    H, Q = scipy.linalg.hessenberg(M, calc_q=True)
    decomposition = hessenberg_eig(H)
    cond = decomposition.condition
    if cond > 1.0 / math.sqrt(_EPS):
        raise IllConditionedError(
            f"eigenvector condition number {cond:.2e} is too large for '{f.name}'; "
            "use the scaling-and-squaring exponential instead"
        )
    values = np.asarray(f(decomposition.lambdas), dtype=complex)
    F = Q @ ((decomposition.X * values) @ decomposition.Xinv) @ Q.conj().T

    if np.isrealobj(M):
        result = real_if_negligible(F)
        if np.iscomplexobj(result):
            get_logger().log_warning(f"{f.name}(M) of a real matrix has a significant imaginary part")
        return result
    return F


# --- Divided differences --------------------------------------------------


def _confluent(a: complex, b: complex) -> bool:
    return abs(a - b) <= CONFLUENCE_TOL * max(1.0, abs(a), abs(b))


def divided_difference(f: "ScalarFunction", t: complex, lam: complex):
    """First divided difference ``f[t, lam]``, switching to ``f'`` at confluent nodes."""
    if _confluent(t, lam):
        return f.nth_derivative(0.5 * (t + lam), 1)
    return (f(t) - f(lam)) / (t - lam)


def _newton_top(f: "ScalarFunction", z: np.ndarray) -> complex:
    m = z.shape[0]
    coef = np.asarray(f(z), dtype=complex).copy()
    for j in range(1, m):
        for i in range(m - 1, j - 1, -1):
            if _confluent(z[i], z[i - j]):
                coef[i] = f.nth_derivative(z[i], j) / math.factorial(j)
            else:
                coef[i] = (coef[i] - coef[i - 1]) / (z[i] - z[i - j])
    return complex(coef[m - 1])


def divided_difference_table(f: "ScalarFunction", nodes: Sequence[complex]):
    """Highest-order divided difference ``f[z_1, ..., z_m]`` via a Newton table.

    Nodes are sorted by real then imaginary part; confluent runs use
    ``f^(j)/j!``. A second pass in reverse order is compared against the
    first and a warning is logged when they differ by more than 1e-8.
    """
    nodes = np.asarray(nodes)
    if nodes.ndim != 1 or nodes.size == 0:
        raise ValueError("divided_difference_table needs a non-empty one-dimensional node list")
    z = nodes.astype(complex)[np.lexsort((nodes.imag, nodes.real))]

    value = _newton_top(f, z)
    check = _newton_top(f, z[::-1])
    if abs(value - check) > CONFLUENCE_TOL * max(abs(value), abs(check), _TINY):
        get_logger().log_warning(
            f"divided difference is order dependent: {value:.6e} vs {check:.6e}; nodes may be nearly confluent"
        )
    if np.isrealobj(nodes):
        return value.real
    return value


def matrix_divided_difference(f: "ScalarFunction", M, nodes: Sequence[complex]) -> np.ndarray:
    """``f[M, z_1, ..., z_m]`` as a sum of resolvent terms over distinct nodes."""
    M = np.asarray(M)
    d = _require_square(M)
    z = np.asarray(nodes, dtype=complex)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("matrix_divided_difference needs a non-empty node list")

    scale = max(float(np.max(np.abs(z))), _TINY)
    if z.size > 1:
        gaps = np.abs(z[:, None] - z[None, :])
        gaps[np.diag_indices(z.size)] = np.inf
        if gaps.min() <= COLLISION_TOL * scale:
            i, j = np.unravel_index(np.argmin(gaps), gaps.shape)
            raise NodeCollisionError(f"nodes {i} and {j} coincide ({z[i]:.6e})")

    F = f.of_matrix(M)
    ident = np.eye(d)
    result = np.zeros((d, d), dtype=complex)
    for i, lam in enumerate(z):
        shifted = M - lam * ident
        if np.linalg.cond(shifted) > 1.0 / _EPS:
            raise SingularResolventError(f"node {i} ({lam:.6e}) is numerically an eigenvalue of M")
        omega = np.prod(lam - np.delete(z, i))
        result += scipy.linalg.solve(shifted, F - f(lam) * ident) / omega
    if np.isrealobj(M):
        return real_if_negligible(result)
    return result


# --- Field of values ------------------------------------------------------


def fov_boundary(M, n_angles: int = 128) -> np.ndarray:
    """Boundary points of the field of values, ordered clockwise.

    For each angle the top eigenvector of the Hermitian part of
    ``exp(i*theta) M`` gives a boundary point as its Rayleigh quotient.
    The points are vertices of an inner polygonal approximation.
    """
    M = np.asarray(M)
    _require_square(M)
    if n_angles < MIN_FOV_ANGLES:
        raise ValueError(f"need at least {MIN_FOV_ANGLES} angles, got {n_angles}")
    points = np.empty(n_angles, dtype=complex)
    for k, theta in enumerate(2.0 * np.pi * np.arange(n_angles) / n_angles):
        rotated = np.exp(1j * theta) * M
        hermitian = 0.5 * (rotated + rotated.conj().T)
        _, vectors = scipy.linalg.eigh(hermitian)
        v = vectors[:, -1]
        points[k] = np.vdot(v, M @ v)
    return points


def _polygon_area2(P: np.ndarray) -> float:
    return float(np.sum(np.imag(np.conj(P) * np.roll(P, -1))))


def distance_to_polygon(polygon, z: complex) -> float:
    """Distance from ``z`` to a closed convex polygon (0 inside)."""
    P = np.asarray(polygon, dtype=complex)
    if P.size == 0:
        raise ValueError("polygon has no vertices")
    if point_in_convex_polygon(P, z):
        return 0.0
    return _distance_to_edges(P, z)


def _distance_to_edges(P: np.ndarray, z: complex) -> float:
    a = P
    ab = np.roll(P, -1) - P
    length2 = np.abs(ab) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(length2 > 0, np.real(np.conj(ab) * (z - a)) / length2, 0.0)
    closest = a + np.clip(t, 0.0, 1.0) * ab
    return float(np.min(np.abs(z - closest)))


def point_in_convex_polygon(polygon, z: complex, tol: float = 1e-12) -> bool:
    """Whether ``z`` lies in the convex polygon, for either vertex orientation."""
    P = np.asarray(polygon, dtype=complex)
    if P.size == 0:
        return False
    scale = max(1.0, float(np.max(np.abs(P))))
    area2 = _polygon_area2(P)
    if abs(area2) <= tol * scale**2:
        # degenerate: a point or a segment
        return _distance_to_edges(P, z) <= tol * scale
    edges = np.roll(P, -1) - P
    cross = np.imag(np.conj(edges) * (z - P)) * math.copysign(1.0, area2)
    return bool(np.all(cross >= -tol * scale * np.abs(edges)))
