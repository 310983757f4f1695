"""Krylov approximations of ``f(A) b`` and the rank-one analysis relating them.

Every approximant has the form ``basis @ y``. The full, truncated and
sketched variants differ in the basis and in the small matrix ``f`` is
applied to; any two of them differ by ``basis g_w(M) w ||b||`` for a matching
Hessenberg ``M`` and vector ``w``, which :func:`rank_one_report` evaluates
and bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .dense import (
    NodeCollisionError,
    SingularResolventError,
    distance_to_polygon,
    eig_decompose,
    expm_rank_one_difference,
    fov_boundary,
    hessenberg_eig,
    is_upper_hessenberg,
    matrix_divided_difference,
    real_if_negligible,
)
from .functions import DerivativeUnavailableError, ScalarFunction
from .krylov import ArnoldiState, OrthoComparison, SketchState, run_arnoldi, start_sketch
from .logger import get_logger
from .sketch import Embedding, sketch_apply
from .sparse import SparseMatrix, spmv

CROUZEIX = 1.0 + math.sqrt(2.0)
GAP_RTOL = 1e-7
GAP_ATOL = 1e-10
BETA_TOL = 1e-10

_TINY = np.finfo(float).tiny


class ApproximationMismatchError(ValueError):
    """Raised when two approximants cannot be compared."""


class Variant(str, Enum):
    FOM = "fom"
    TRFOM = "trfom"
    SFOM_PINV = "sfom_pinv"
    SFOM_RANKONE_EXPM = "sfom_rankone_expm"
    SFOM_RANKONE_SCHUR = "sfom_rankone_schur"
    SFOM_WHITENED = "sfom_whitened"

    @property
    def sketched(self) -> bool:
        return self.value.startswith("sfom")


SKETCHED_VARIANTS = tuple(v for v in Variant if v.sketched)


@dataclass(frozen=True, eq=False)
class Approximant:
    """``value = basis @ y`` at Krylov dimension ``d``."""

    variant: Variant
    d: int
    y: np.ndarray
    value: np.ndarray
    fingerprint: str = ""
    warnings: Tuple[str, ...] = ()


def _first_column(F: np.ndarray, scale: float) -> np.ndarray:
    return real_if_negligible(F[:, 0] * scale)


def fom_from_state(state: ArnoldiState, f: ScalarFunction, variant: Variant = Variant.FOM) -> Approximant:
    """``U_d f(H_d) e_1 ||b||`` from the current state (full or truncated)."""
    if state.d < 1:
        raise ValueError("state has no completed Arnoldi step")
    y = _first_column(f.of_matrix(state.H_d), state.beta)
    return Approximant(variant, state.d, y, state.U_d @ y, state.fingerprint)


def fom_approx(A: SparseMatrix, b, d: int, f: ScalarFunction) -> Approximant:
    return fom_from_state(run_arnoldi(A, b, d, k=None), f, Variant.FOM)


def trfom_approx(A: SparseMatrix, b, d: int, k: int, f: ScalarFunction) -> Approximant:
    return fom_from_state(run_arnoldi(A, b, d, k=k), f, Variant.TRFOM)


def sfom_from_state(
    state: ArnoldiState,
    sk: SketchState,
    f: ScalarFunction,
    variant: Variant,
    A: Optional[SparseMatrix] = None,
    SAU: Optional[np.ndarray] = None,
) -> Approximant:
    """Extract a sketched approximant in one of four equivalent formulations.

    sfom_pinv
        ``f(T_d^{-1} Q_d^T S A U_d) T_d^{-1} Q_d^T S b``; needs ``A`` or a
        precomputed ``SAU = S A U_d``.
    sfom_rankone_expm / sfom_rankone_schur
        ``f(H_d + r e_d^T) e_1 ||b||``, plain or Schur-based exponential.
    sfom_whitened
        ``T_d^{-1} f(H_hat + t_hat e_d^T) e_1 ||S b||`` by back substitution.
    """
    if not variant.sketched:
        raise ValueError(f"'{variant.value}' is not a sketched variant")
    if sk.d != state.d or state.d < 1:
        raise ValueError(f"sketch (d={sk.d}) and basis (d={state.d}) must be at the same positive step")

    d = state.d
    T_d = sk.T_d
    e_d = np.zeros(d)
    e_d[-1] = 1.0
    warnings: List[str] = []
    if any(j < d for j in sk.qr.deficient_columns):
        warnings.append("sketched basis is numerically rank deficient; final accuracy may be limited")

    if variant is Variant.SFOM_PINV:
        if SAU is None:
            if A is None:
                raise ValueError("sfom_pinv needs the matrix or a precomputed S A U_d")
            SAU = sketch_apply(sk.S, spmv(A, state.U_d))
        reduced = scipy.linalg.solve_triangular(T_d, sk.Q_d.T @ SAU)
        sketched_b = state.beta * sk.SU[:, 0]
        coefficients = scipy.linalg.solve_triangular(T_d, sk.Q_d.T @ sketched_b)
        y = real_if_negligible(f.of_matrix(reduced) @ coefficients)
    elif variant is Variant.SFOM_WHITENED:
        whitened = sk.H_hat + np.outer(sk.t_hat, e_d)
        # ||S b|| = ||b|| * tau_1
        y_hat = _first_column(f.of_matrix(whitened), state.beta * sk.qr.T[0, 0])
        y = scipy.linalg.solve_triangular(T_d, y_hat)
    else:
        method = "schur" if variant is Variant.SFOM_RANKONE_SCHUR else "expm"
        modified = state.H_d + np.outer(sk.r, e_d)
        y = _first_column(f.of_matrix(modified, method=method), state.beta)

    for message in warnings:
        get_logger().log_warning(f"{variant.value} d={d}: {message}")
    return Approximant(variant, d, y, state.U_d @ y, state.fingerprint, tuple(warnings))


def sfom_approx(A: SparseMatrix, b, d: int, k: int, f: ScalarFunction, S: Embedding, variant: Variant) -> Approximant:
    state = run_arnoldi(A, b, d, k=k)
    sk = start_sketch(S, state)
    return sfom_from_state(state, sk, f, variant, A=A)


# --- Rank-one analysis ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class RankOneReport:
    """Evaluation of ``f(M + w e_d^T) e_1 - f(M) e_1`` by several routes.

    ``gw_w`` is the eigen-expansion ``sum_i alpha_i beta_i f[M, lambda_i] w``,
    ``direct_diff`` the difference of the two matrix functions, taken from a
    block exponential for ``exp(c z)`` so that it is not lost to cancellation.
    ``expansion_scale`` is ``sum_i |alpha_i beta_i| ||f[M, lambda_i] w||``, the
    size of the terms that cancel in ``gw_w``. When the eigenvalues are
    simple, ``dd_value`` is ``f[M, lambda_1..lambda_d] w`` and
    ``partial_fraction_sum`` the same quantity assembled from resolvent terms
    and scaled by ``m_d``. ``bound`` includes the derivative factor,
    ``figure_bound`` is the same expression without it.
    """

    w: np.ndarray
    lambdas: np.ndarray
    alphas: np.ndarray
    betas: np.ndarray
    gw_w: np.ndarray
    direct_diff: np.ndarray
    m_d: float
    log_m_d: float
    dd_value: Optional[np.ndarray]
    partial_fraction_sum: Optional[np.ndarray]
    omega_prime: Optional[np.ndarray]
    bound: float
    figure_bound: float
    disc_center: complex
    disc_radius: float
    gammas: np.ndarray
    effective_set: np.ndarray
    delta: float
    effective_sum: np.ndarray
    effective_bound: float
    expansion_scale: float
    flags: Tuple[str, ...] = ()


def _exp(x: float) -> float:
    if x == -math.inf:
        return 0.0
    return math.exp(x) if x < 709.0 else math.inf


def _distinct(nodes: np.ndarray) -> bool:
    if nodes.size < 2:
        return True
    gaps = np.abs(nodes[:, None] - nodes[None, :])
    gaps[np.diag_indices(nodes.size)] = np.inf
    return bool(gaps.min() > 1e-10 * max(float(np.max(np.abs(nodes))), _TINY))


def rank_one_report(
    M,
    w,
    f: ScalarFunction,
    n_angles: int = 128,
    beta_tol: float = BETA_TOL,
    method: str = "expm",
) -> RankOneReport:
    """Analyse the rank-one modification ``M -> M + w e_d^T`` of an upper Hessenberg ``M``."""
    M = np.asarray(M, dtype=float)
    w = np.asarray(w)
    d = M.shape[0]
    if M.ndim != 2 or M.shape[1] != d or w.shape != (d,):
        raise ValueError(f"need a square M and a matching w, got {M.shape} and {w.shape}")
    if not is_upper_hessenberg(M):
        raise ValueError("M must be upper Hessenberg")

    flags: List[str] = []
    e_d = np.zeros(d)
    e_d[-1] = 1.0
    modified = M + np.outer(w, e_d)
    decomposition = hessenberg_eig(modified)
    if decomposition.defective:
        flags.append("modified matrix is nearly defective")
    lambdas = decomposition.lambdas
    alphas = decomposition.alphas
    betas = decomposition.betas
    weights = alphas * betas

    F = f.of_matrix(M, method=method)
    if f.exp_scale is not None and f.matrix_func is None and method != "eig":
        direct_diff = real_if_negligible(expm_rank_one_difference(f.exp_scale * M, f.exp_scale * w))
    else:
        direct_diff = real_if_negligible(f.of_matrix(modified, method=method)[:, 0] - F[:, 0])

    # resolvent terms f[M, lambda_i] w
    norm_M = float(np.linalg.norm(M, 2))
    scale = max(norm_M, 1.0)
    eig_M = scipy.linalg.eigvals(M)
    Fw = F @ w
    ident = np.eye(d)
    terms = np.empty((d, d), dtype=complex)
    for i, lam in enumerate(lambdas):
        node = lam
        if np.min(np.abs(eig_M - lam)) <= 1e-8 * scale:
            node = lam + 1e-8 * scale
            flags.append(f"node {i} coincides with an eigenvalue of M; perturbed")
        terms[:, i] = scipy.linalg.solve(M - node * ident, Fw - f(node) * w)
    gw_w = real_if_negligible(terms @ weights)
    expansion_scale = float(np.sum(np.abs(weights) * np.linalg.norm(terms, axis=0)))

    subdiagonal = np.abs(np.diag(M, -1))
    with np.errstate(divide="ignore"):
        log_m_d = float(np.sum(np.log(subdiagonal))) if d > 1 else 0.0
    with np.errstate(over="ignore"):
        m_d = float(np.prod(np.diag(M, -1))) if d > 1 else 1.0

    dd_value = partial_fraction_sum = omega_prime = None
    if _distinct(lambdas):
        omega_prime = np.array([np.prod(lam - np.delete(lambdas, i)) for i, lam in enumerate(lambdas)])
        partial_fraction_sum = real_if_negligible(m_d * (terms @ (1.0 / omega_prime)))
        try:
            dd_value = real_if_negligible(matrix_divided_difference(f, M, lambdas) @ w)
        except (SingularResolventError, NodeCollisionError) as exc:
            flags.append(f"divided-difference route skipped: {exc}")
    else:
        flags.append("eigenvalues are not simple; divided-difference routes skipped")

    fov = fov_boundary(M, n_angles)
    center = complex(np.mean(fov))
    fov_radius = float(np.max(np.abs(fov - center))) / math.cos(math.pi / n_angles)
    radius = max(fov_radius, float(np.max(np.abs(lambdas - center))))

    w_norm = float(np.linalg.norm(w))
    log_figure = math.log(CROUZEIX) + log_m_d - math.lgamma(d + 1) + (math.log(w_norm) if w_norm > 0 else -math.inf)
    figure_bound = _exp(log_figure)
    try:
        log_derivative = f.log_max_derivative_on_disc(center, radius, d)
        bound = _exp(log_figure + log_derivative)
    except DerivativeUnavailableError as exc:
        flags.append(str(exc))
        log_derivative = math.nan
        bound = math.nan

    distances = np.array([distance_to_polygon(fov, lam) for lam in lambdas])
    gammas = distances / norm_M if norm_M > 0 else np.full(d, math.inf)

    beta_abs = np.abs(betas)
    effective_set = np.flatnonzero(beta_abs > beta_tol * beta_abs.max()) if beta_abs.max() > 0 else np.arange(0)
    delta = float(distances[effective_set].max()) if effective_set.size else 0.0
    effective_sum = real_if_negligible(terms[:, effective_set] @ weights[effective_set])
    if math.isnan(log_derivative):
        effective_bound = bound
    else:
        effective_bound = _exp(log_figure + f.log_max_derivative_on_disc(center, fov_radius + delta, d))

    return RankOneReport(
        w=w,
        lambdas=lambdas,
        alphas=alphas,
        betas=betas,
        gw_w=gw_w,
        direct_diff=direct_diff,
        m_d=m_d,
        log_m_d=log_m_d,
        dd_value=dd_value,
        partial_fraction_sum=partial_fraction_sum,
        omega_prime=omega_prime,
        bound=bound,
        figure_bound=figure_bound,
        disc_center=center,
        disc_radius=radius,
        gammas=gammas,
        effective_set=effective_set,
        delta=delta,
        effective_sum=effective_sum,
        effective_bound=effective_bound,
        expansion_scale=expansion_scale,
        flags=tuple(flags),
    )


# --- Approximation gaps ---------------------------------------------------


class GapKind(str, Enum):
    SKETCHED_VS_FULL = "sketched_vs_full"
    TRUNCATED_VS_FULL = "truncated_vs_full"
    TRUNCATED_VS_SKETCHED = "truncated_vs_sketched"


@dataclass(frozen=True, eq=False)
class GapContext:
    """The ``(M, w)`` pair and basis that relate two approximants."""

    kind: GapKind
    M: np.ndarray
    w: np.ndarray
    basis: np.ndarray
    beta: float
    d: int
    f: ScalarFunction
    fingerprint: str = ""


def sketched_vs_full_context(state: ArnoldiState, comparison: OrthoComparison, f: ScalarFunction) -> GapContext:
    return GapContext(
        GapKind.SKETCHED_VS_FULL,
        comparison.curly_H,
        comparison.r_hat,
        comparison.curly_U_d,
        state.beta,
        state.d,
        f,
        state.fingerprint,
    )


def truncated_vs_full_context(state: ArnoldiState, comparison: OrthoComparison, f: ScalarFunction) -> GapContext:
    return GapContext(
        GapKind.TRUNCATED_VS_FULL,
        comparison.curly_H,
        comparison.v_trunc,
        comparison.curly_U_d,
        state.beta,
        state.d,
        f,
        state.fingerprint,
    )


def truncated_vs_sketched_context(state: ArnoldiState, sk: SketchState, f: ScalarFunction) -> GapContext:
    return GapContext(
        GapKind.TRUNCATED_VS_SKETCHED,
        state.H_d.copy(),
        sk.r.copy(),
        state.U_d,
        state.beta,
        state.d,
        f,
        state.fingerprint,
    )


@dataclass(frozen=True, eq=False)
class GapReport:
    report: RankOneReport
    gap: np.ndarray
    predicted: np.ndarray
    discrepancy: float
    tolerance: float

    @property
    def verified(self) -> bool:
        return self.discrepancy <= self.tolerance


def approximation_gap(modified: Approximant, base: Approximant, context: GapContext) -> GapReport:
    """Check ``modified.value - base.value == basis g_w(M) w ||b||`` and return the analysis."""
    if not (modified.d == base.d == context.d):
        raise ApproximationMismatchError(
            f"approximants at d={modified.d} and d={base.d} do not match the context at d={context.d}"
        )
    prints = {p for p in (modified.fingerprint, base.fingerprint, context.fingerprint) if p}
    if len(prints) > 1:
        raise ApproximationMismatchError("approximants were computed from different (A, b)")

    report = rank_one_report(context.M, context.w, context.f)
    predicted = context.basis @ report.gw_w * context.beta
    gap = modified.value - base.value
    discrepancy = float(np.linalg.norm(gap - predicted))
    tolerance = GAP_RTOL * max(np.linalg.norm(gap), np.linalg.norm(predicted)) + GAP_ATOL * np.linalg.norm(base.value)
    if discrepancy > tolerance:
        get_logger().log_warning(
            f"{context.kind.value} gap identity off by {discrepancy:.3e} (tolerance {tolerance:.3e}) at d={context.d}"
        )
    return GapReport(report, gap, predicted, discrepancy, float(tolerance))


# --- Eigenvector growth ---------------------------------------------------


@dataclass(frozen=True, eq=False)
class GrowthProfile:
    """Eigenvector component magnitudes next to the predicted growth profile."""

    lam: complex
    eta: np.ndarray
    phi: np.ndarray


def eigvec_growth_profile(M_mod, index: int, decomposition=None) -> GrowthProfile:
    """Compare ``|eta_k|`` of one eigenvector with ``|phi_k(lambda)|``.

    ``M_mod`` is ``N + e_d w^T`` with ``N`` lower Hessenberg, so its first
    ``d - 1`` rows are those of ``N``. ``phi`` is built from the ratios
    ``|N_jj - lambda| / |N_{j,j+1}|`` and scaled so that its last entry is 1.
    """
    M_mod = np.asarray(M_mod)
    d = M_mod.shape[0]
    if d > 2 and np.any(np.triu(M_mod[:-1], 2) != 0):
        raise ValueError("leading rows are not lower Hessenberg")
    superdiagonal = np.diag(M_mod, 1)
    zero = np.flatnonzero(superdiagonal == 0)
    if zero.size:
        raise ValueError(f"zero superdiagonal entry at position {int(zero[0]) + 1}")

    decomposition = decomposition or eig_decompose(M_mod)
    lam = complex(decomposition.lambdas[index])
    x = decomposition.X[:, index]
    eta = np.abs(x) / np.linalg.norm(x)

    ratios = np.abs(np.diag(M_mod)[:-1] - lam) / np.abs(superdiagonal)
    with np.errstate(divide="ignore"):
        log_phi = np.concatenate([[0.0], np.cumsum(np.log(ratios))])
    phi = np.exp(log_phi - log_phi[-1])
    return GrowthProfile(lam, eta, phi)


def crouzeix_palencia_check(M, coeffs: Sequence[float], n_angles: int = 256) -> Tuple[float, float]:
    """``||p(M)||`` and ``(1 + sqrt 2)`` times the sampled maximum of ``|p|`` on the field of values.

    ``coeffs`` are ordered from the highest degree down, as in ``numpy.polyval``.
    """
    M = np.asarray(M)
    d = M.shape[0]
    value = np.zeros((d, d), dtype=np.result_type(M.dtype, float))
    for c in coeffs:
        value = value @ M + c * np.eye(d)
    lhs = float(np.linalg.norm(value, 2))
    boundary = fov_boundary(M, n_angles)
    rhs = CROUZEIX * float(np.max(np.abs(np.polyval(coeffs, boundary)))) * (1.0 + 1e-6)
    return lhs, rhs
