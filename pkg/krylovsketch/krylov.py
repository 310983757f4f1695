"""Truncated Arnoldi with an incrementally sketched basis.

``ArnoldiState`` holds the (possibly non-orthogonal) basis and its banded
Hessenberg matrix. ``SketchState`` follows it one column at a time, keeping
the thin QR factorization of the sketched basis and the quantities of the
sketched and whitened Arnoldi relations derived from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg

from .dense import QRFactors, empty_qr, qr_append_column, thin_qr
from .logger import get_logger
from .sketch import Embedding, estimate_epsilon, sketch_apply, whitening_bound
from .sparse import DimensionMismatchError, SparseMatrix, as_vector, estimate_norm, spmv
from .utils import fingerprint

BREAKDOWN_TOL = 1e-14
DEPENDENCE_TOL = 1e-14


class BreakdownError(RuntimeError):
    """Raised when stepping an Arnoldi state that has already broken down."""


class DegenerateBasisError(RuntimeError):
    """Raised when the truncated basis has numerically lost rank."""


def _unit(d: int) -> np.ndarray:
    e = np.zeros(d)
    e[-1] = 1.0
    return e


def _right_divide(B: np.ndarray, T: np.ndarray) -> np.ndarray:
    """``B @ inv(T)`` for upper triangular ``T``."""
    return scipy.linalg.solve_triangular(T, B.T, trans="T").T


@dataclass(eq=False)
class ArnoldiState:
    """Basis and Hessenberg buffers of a (truncated) Arnoldi run.

    ``k is None`` means full orthogonalization. ``d`` counts completed steps;
    after step ``d`` the basis has ``d + 1`` columns unless the run broke
    down, in which case column ``d + 1`` is zero and ``breakdown == d``.
    """

    basis: np.ndarray
    hessenberg: np.ndarray
    k: Optional[int]
    beta: float
    norm_A: float
    fingerprint: str
    d: int = 0
    breakdown: Optional[int] = None

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    @property
    def full(self) -> bool:
        return self.k is None

    @property
    def broken_down(self) -> bool:
        return self.breakdown is not None

    @property
    def U(self) -> np.ndarray:
        return self.basis[:, : self.d + 1]

    @property
    def U_d(self) -> np.ndarray:
        return self.basis[:, : self.d]

    @property
    def H_underline(self) -> np.ndarray:
        return self.hessenberg[: self.d + 1, : self.d]

    @property
    def H_d(self) -> np.ndarray:
        return self.hessenberg[: self.d, : self.d]

    @property
    def h_next(self) -> float:
        return float(self.hessenberg[self.d, self.d - 1]) if self.d else 0.0

    @property
    def u_next(self) -> np.ndarray:
        return self.basis[:, self.d]

    def _grow(self):
        capacity = self.hessenberg.shape[1]
        new_capacity = 2 * capacity
        basis = np.zeros((self.n, new_capacity + 1))
        basis[:, : capacity + 1] = self.basis
        hessenberg = np.zeros((new_capacity + 1, new_capacity))
        hessenberg[: capacity + 1, :capacity] = self.hessenberg
        self.basis = basis
        self.hessenberg = hessenberg


def start_arnoldi(A: SparseMatrix, b, k=None, capacity: int = 32, norm_A: Optional[float] = None) -> ArnoldiState:
    """Initialize a run with ``u_1 = b/||b||``.

    ``k`` of ``None``, ``0`` or infinity selects full orthogonalization.
    """
    if A.n_rows != A.n_cols:
        raise DimensionMismatchError(f"Krylov methods need a square matrix, got {A.shape}")
    b = as_vector(b, allow_complex=False)
    if b.shape[0] != A.n_cols:
        raise DimensionMismatchError(f"starting vector has length {b.shape[0]}, matrix has order {A.n_cols}")
    beta = float(np.linalg.norm(b))
    if beta == 0.0:
        raise ValueError("starting vector must be nonzero")

    if k is not None and (k == 0 or math.isinf(k)):
        k = None
    if k is not None:
        if k < 1:
            raise ValueError(f"truncation length must be positive, got {k}")
        k = int(k)

    capacity = max(1, int(capacity))
    basis = np.zeros((A.n_rows, capacity + 1))
    basis[:, 0] = b / beta
    return ArnoldiState(
        basis=basis,
        hessenberg=np.zeros((capacity + 1, capacity)),
        k=k,
        beta=beta,
        norm_A=estimate_norm(A) if norm_A is None else float(norm_A),
        fingerprint=fingerprint(A.row_offsets, A.col_indices, A.values, b),
    )


def arnoldi_step(state: ArnoldiState, A: SparseMatrix) -> ArnoldiState:
    """Extend the basis by one vector, in place.

    ``A u_d`` is orthogonalized by two modified Gram-Schmidt passes against
    the last ``k`` basis vectors (all of them in full mode).
    """
    if state.broken_down:
        raise BreakdownError(f"Arnoldi broke down at d={state.breakdown}; the Krylov space is invariant")
    j = state.d
    if j + 1 > state.hessenberg.shape[1]:
        state._grow()

    w = spmv(A, state.basis[:, j])
    lo = 0 if state.k is None else max(0, j - state.k + 1)
    for _ in range(2):
        for i in range(lo, j + 1):
            u = state.basis[:, i]
            c = u @ w
            w -= c * u
            state.hessenberg[i, j] += c

    h = float(np.linalg.norm(w))
    state.d = j + 1
    if h <= BREAKDOWN_TOL * state.norm_A:
        state.hessenberg[j + 1, j] = 0.0
        state.basis[:, j + 1] = 0.0
        state.breakdown = state.d
        get_logger().log_breakdown(state.d, h)
    else:
        state.hessenberg[j + 1, j] = h
        state.basis[:, j + 1] = w / h
    return state


def run_arnoldi(A: SparseMatrix, b, d: int, k=None) -> ArnoldiState:
    """Run ``d`` steps, stopping early at a breakdown."""
    if d < 1:
        raise ValueError(f"number of steps must be positive, got {d}")
    state = start_arnoldi(A, b, k=k, capacity=d)
    while state.d < d and not state.broken_down:
        arnoldi_step(state, A)
    return state


def arnoldi_relation_residual(state: ArnoldiState, A: SparseMatrix) -> np.ndarray:
    """Column norms of ``A U_d - U_{d+1} H_underline``."""
    residual = spmv(A, state.U_d) - state.U @ state.H_underline
    return np.linalg.norm(residual, axis=0)


@dataclass(eq=False)
class SketchState:
    """Sketched basis ``S U_{d+1}`` with its thin QR factors.

    With ``S U_{d+1} = Q_{d+1} T_{d+1}``, ``t`` and ``tau_next`` are the last
    column of ``T_{d+1}``, ``r = h T_d^{-1} t``, ``H_hat = T_d H_d T_d^{-1}``
    and ``t_hat = (h / tau_d) t`` where ``h = h_{d+1,d}``.
    """

    S: Embedding
    buffer: np.ndarray
    qr: QRFactors
    d: int = 0
    r: np.ndarray = field(default_factory=lambda: np.zeros(0))
    H_hat: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    t_hat: np.ndarray = field(default_factory=lambda: np.zeros(0))
    h_next: float = 0.0
    dependent_steps: List[int] = field(default_factory=list)

    @property
    def SU(self) -> np.ndarray:
        return self.buffer[:, : self.qr.n_columns]

    @property
    def T_d(self) -> np.ndarray:
        return self.qr.T[: self.d, : self.d]

    @property
    def Q_d(self) -> np.ndarray:
        return self.qr.Q[:, : self.d]

    @property
    def t(self) -> np.ndarray:
        if self.qr.n_columns <= self.d:
            return np.zeros(self.d)
        return self.qr.T[: self.d, self.d]

    @property
    def tau_next(self) -> float:
        if self.qr.n_columns <= self.d:
            return 0.0
        return float(self.qr.T[self.d, self.d])

    @property
    def q(self) -> np.ndarray:
        if self.qr.n_columns <= self.d:
            return np.zeros(self.S.s)
        return self.qr.Q[:, self.d]

    @property
    def tau_d(self) -> float:
        return float(self.qr.T[self.d - 1, self.d - 1])


def _append_sketch(sk: SketchState, u: np.ndarray):
    column = sk.qr.n_columns
    if column >= sk.buffer.shape[1]:
        grown = np.zeros((sk.S.s, 2 * sk.buffer.shape[1]))
        grown[:, :column] = sk.buffer
        sk.buffer = grown
    su = sketch_apply(sk.S, u)
    sk.buffer[:, column] = su
    sk.qr = qr_append_column(sk.qr, su)
    if column in sk.qr.deficient_columns or sk.qr.T[column, column] <= DEPENDENCE_TOL:
        sk.dependent_steps.append(column)
        get_logger().log_dependence(column, float(sk.qr.T[column, column]))


def _advance(sk: SketchState, state: ArnoldiState):
    d = sk.d + 1
    at_breakdown = state.breakdown == d
    if not at_breakdown:
        _append_sketch(sk, state.basis[:, d])
    sk.d = d

    T_d = sk.T_d
    h = 0.0 if at_breakdown else float(state.hessenberg[d, d - 1])
    H_d = state.hessenberg[:d, :d]
    try:
        sk.r = h * scipy.linalg.solve_triangular(T_d, sk.t)
        sk.H_hat = _right_divide(T_d @ H_d, T_d)
    except np.linalg.LinAlgError as exc:
        raise DegenerateBasisError(f"sketched basis is singular at d={d}: {exc}") from exc
    sk.t_hat = (h / sk.tau_d) * sk.t
    sk.h_next = h


def start_sketch(S: Embedding, state: ArnoldiState, capacity: Optional[int] = None) -> SketchState:
    """Sketch the current basis of ``state`` column by column."""
    if S.n != state.n:
        raise DimensionMismatchError(f"embedding width {S.n} does not match basis length {state.n}")
    capacity = capacity or max(state.hessenberg.shape[1] + 1, 2)
    sk = SketchState(S=S, buffer=np.zeros((S.s, capacity)), qr=empty_qr(S.s))
    _append_sketch(sk, state.basis[:, 0])
    while sk.d < state.d:
        _advance(sk, state)
    return sk


def sketch_step(sk: SketchState, state: ArnoldiState) -> SketchState:
    """Bring ``sk`` up to date after one :func:`arnoldi_step`."""
    if state.d != sk.d + 1:
        raise ValueError(f"sketch is at d={sk.d} but the basis is at d={state.d}; advance one step at a time")
    _advance(sk, state)
    return sk


def sketched_au(state: ArnoldiState, sk: SketchState, A: SparseMatrix) -> np.ndarray:
    return sketch_apply(sk.S, spmv(A, state.U_d))


def sketched_arnoldi_residual(
    state: ArnoldiState, sk: SketchState, A: SparseMatrix, SAU: Optional[np.ndarray] = None
) -> Tuple[float, float]:
    """Residual of ``S A U_d = S U_d (H_d + r e_d^T) + tau h q e_d^T``.

    Returns the residual norm and ``||S A U_d||`` (Frobenius norms).
    """
    SAU = sketched_au(state, sk, A) if SAU is None else SAU
    e_d = _unit(sk.d)
    rhs = sk.buffer[:, : sk.d] @ (state.H_d + np.outer(sk.r, e_d))
    rhs += sk.tau_next * sk.h_next * np.outer(sk.q, e_d)
    return float(np.linalg.norm(SAU - rhs)), float(np.linalg.norm(SAU))


def whitened_sketched_residual(
    state: ArnoldiState, sk: SketchState, A: SparseMatrix, SAU: Optional[np.ndarray] = None
) -> Tuple[float, float]:
    """Residual of the whitened relation
    ``S A U_d T_d^{-1} = Q_d (H_hat + t_hat e_d^T) + (tau_{d+1} h / tau_d) q e_d^T``.
    """
    SAU = sketched_au(state, sk, A) if SAU is None else SAU
    whitened = _right_divide(SAU, sk.T_d)
    e_d = _unit(sk.d)
    rhs = sk.Q_d @ (sk.H_hat + np.outer(sk.t_hat, e_d))
    rhs += (sk.tau_next * sk.h_next / sk.tau_d) * np.outer(sk.q, e_d)
    return float(np.linalg.norm(whitened - rhs)), float(np.linalg.norm(whitened))


@dataclass(frozen=True)
class WhiteningReport:
    kappa: float
    epsilon_hat: float
    bound: float


def whitened_basis_condition(state: ArnoldiState, sk: SketchState, max_dim: int = 500) -> WhiteningReport:
    """2-norm condition number of ``U_d T_d^{-1}`` and the bound implied by the measured distortion."""
    d = sk.d
    if d > max_dim:
        raise ValueError(f"d={d} exceeds the dense analysis cap of {max_dim}")
    sigma = scipy.linalg.svdvals(_right_divide(state.U_d, sk.T_d))
    kappa = float(sigma[0] / sigma[-1]) if sigma[-1] > 0 else math.inf
    epsilon = estimate_epsilon(sk.S, thin_qr(state.U_d).Q)
    return WhiteningReport(kappa, epsilon, whitening_bound(epsilon))


@dataclass(frozen=True, eq=False)
class OrthoComparison:
    """Truncated basis expressed in an orthonormal basis of the same space.

    ``U_{d+1} = curly_U curly_T``; ``curly_H`` is the Hessenberg matrix of
    full Arnoldi on that space, ``r_hat`` the rank-one vector relating it
    to the sketched approximation, ``v_trunc`` the one relating it to the
    truncated approximation.
    """

    curly_U: np.ndarray
    curly_T: np.ndarray
    curly_H: np.ndarray
    r_hat: np.ndarray
    v_trunc: np.ndarray
    bound: float
    epsilon_hat: float
    tau_ratio: float

    @property
    def d(self) -> int:
        return self.curly_H.shape[0]

    @property
    def curly_U_d(self) -> np.ndarray:
        return self.curly_U[:, : self.d]

    @property
    def curly_t(self) -> np.ndarray:
        return self.curly_T[: self.d, self.d]


def ortho_comparison(state: ArnoldiState, sk: SketchState) -> OrthoComparison:
    """Householder QR of ``U_{d+1}`` and the derived full-Arnoldi quantities.

    ``bound`` is ``h |tau_hat_{d+1} / tau_hat_d| sqrt((1 + eps)/(1 - eps))``
    with ``eps`` measured on ``range(U_{d+1})``; it bounds ``||r_hat||``.
    """
    d = state.d
    if d < 1 or sk.d != d:
        raise ValueError(f"sketch (d={sk.d}) and basis (d={d}) must be at the same positive step")

    if state.broken_down:
        factors = thin_qr(state.U_d)
        curly_U = np.column_stack([factors.Q, np.zeros(state.n)])
        curly_T = np.zeros((d + 1, d + 1))
        curly_T[:d, :d] = factors.T
    else:
        factors = thin_qr(state.U)
        curly_U, curly_T = factors.Q, factors.T

    tau_hat = np.abs(np.diag(curly_T))
    degenerate = np.flatnonzero(tau_hat[:d] <= DEPENDENCE_TOL)
    if degenerate.size:
        raise DegenerateBasisError(f"truncated basis has degenerated at column {int(degenerate[0]) + 1} of {d}")

    T_script = curly_T[:d, :d]
    t_script = curly_T[:d, d]
    tau_hat_d = curly_T[d - 1, d - 1]
    tau_hat_next = curly_T[d, d]
    h = state.h_next
    e_d = _unit(d)

    coefficients = scipy.linalg.solve_triangular(sk.T_d, sk.t)
    r_hat = (T_script @ coefficients - t_script) * (h / tau_hat_d)
    curly_H = _right_divide(T_script @ state.H_d, T_script) + (h / tau_hat_d) * np.outer(t_script, e_d)
    curly_H = np.triu(curly_H, -1)
    v_trunc = -(h / tau_hat_d) * t_script

    basis = curly_U if not state.broken_down else curly_U[:, :d]
    epsilon = estimate_epsilon(sk.S, basis)
    tau_ratio = abs(tau_hat_next / tau_hat_d)
    return OrthoComparison(
        curly_U=curly_U,
        curly_T=curly_T,
        curly_H=curly_H,
        r_hat=r_hat,
        v_trunc=v_trunc,
        bound=h * tau_ratio * whitening_bound(epsilon),
        epsilon_hat=epsilon,
        tau_ratio=tau_ratio,
    )


def sketched_least_squares_residual(
    state: ArnoldiState, sk: SketchState, comparison: Optional[OrthoComparison] = None
) -> Tuple[float, float]:
    """Residual of the sketched least-squares fit of ``u_{d+1}`` by ``U_d``.

    With ``x_S = argmin ||S (U_d x - u_{d+1})|| = T_d^{-1} t`` this returns
    ``||U_d x_S - u_{d+1}||`` and the bound
    ``sqrt((1 + eps)/(1 - eps)) |tau_hat_{d+1}|``.
    """
    comparison = comparison or ortho_comparison(state, sk)
    x_sketch = scipy.linalg.solve_triangular(sk.T_d, sk.t)
    residual = float(np.linalg.norm(state.U_d @ x_sketch - state.u_next))
    bound = whitening_bound(comparison.epsilon_hat) * abs(comparison.curly_T[-1, -1])
    return residual, bound
