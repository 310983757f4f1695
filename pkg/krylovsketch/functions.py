"""Scalar functions that can be applied to small dense matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from . import dense


class DerivativeUnavailableError(ValueError):
    """Raised when a derivative or derivative bound is requested but not known."""


@dataclass(frozen=True)
class ScalarFunction:
    """A scalar function with optional derivative information.

    ``exp_scale`` marks functions of the form ``exp(c*z)``; they get the
    scaling-and-squaring path in :meth:`of_matrix` and a closed form for
    derivative bounds. Everything else goes through an eigendecomposition
    unless ``matrix_func`` supplies a direct evaluation.
    """

    name: str
    func: Callable[[np.ndarray], np.ndarray]
    derivative: Optional[Callable[[np.ndarray, int], np.ndarray]] = None
    exp_scale: Optional[float] = None
    derivative_bound: Optional[Callable[[complex, float, int], float]] = None
    matrix_func: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, z):
        return self.func(z)

    def nth_derivative(self, z, order: int):
        if order < 0:
            raise ValueError(f"derivative order must be non-negative, got {order}")
        if order == 0:
            return self.func(z)
        if self.derivative is None:
            raise DerivativeUnavailableError(f"{self.name}: derivative of order {order} is not available")
        return self.derivative(z, order)

    def log_max_derivative_on_disc(self, center: complex, radius: float, order: int) -> float:
        """Return ``log max |f^(order)(z)|`` over the closed disc ``|z - center| <= radius``."""
        if radius < 0:
            raise ValueError(f"disc radius must be non-negative, got {radius}")
        if self.exp_scale is not None:
            c = self.exp_scale
            if c == 0:
                return 0.0 if order == 0 else -math.inf
            return order * math.log(abs(c)) + (c * complex(center)).real + abs(c) * radius
        if self.derivative_bound is None:
            raise DerivativeUnavailableError(f"{self.name}: no derivative bound on discs")
        return self.derivative_bound(complex(center), float(radius), order)

    def max_derivative_on_disc(self, center: complex, radius: float, order: int) -> float:
        log_value = self.log_max_derivative_on_disc(center, radius, order)
        with np.errstate(over="ignore"):
            return float(np.exp(log_value))

    def of_matrix(self, M, method: str = "expm") -> np.ndarray:
        """Evaluate ``f(M)`` for a small dense matrix.

        ``method`` is one of ``"expm"`` (scaling and squaring), ``"schur"``
        (scaling and squaring on the real Schur form) or ``"eig"``
        (eigendecomposition). Non-exponential functions always use the
        eigendecomposition unless ``matrix_func`` is set.
        """
        if method not in ("expm", "schur", "eig"):
            raise ValueError(f"unknown matrix function method '{method}'")
        M = np.asarray(M)
        if self.matrix_func is not None:
            return self.matrix_func(M)
        if self.exp_scale is not None and method != "eig":
            scaled = self.exp_scale * M
            if method == "schur":
                return dense.expm_via_schur(scaled)
            return dense.expm(scaled)
        return dense.funm_eig(M, self)


EXP = ScalarFunction(
    name="exp",
    func=np.exp,
    derivative=lambda z, order: np.exp(z),
    exp_scale=1.0,
)

NEXP = ScalarFunction(
    name="nexp",
    func=lambda z: np.exp(-z),
    derivative=lambda z, order: (-1) ** order * np.exp(-z),
    exp_scale=-1.0,
)


def power_function(k: int) -> ScalarFunction:
    """Return ``z -> z**k`` for a non-negative integer ``k``."""
    if k < 0:
        raise ValueError(f"power must be non-negative, got {k}")

    def derivative(z, order):
        if order > k:
            return np.zeros_like(np.asarray(z, dtype=complex))
        return math.perm(k, order) * np.asarray(z) ** (k - order)

    def bound(center, radius, order):
        if order > k:
            return -math.inf
        peak = abs(center) + radius
        if peak == 0:
            return 0.0 if order == k else -math.inf
        return math.log(math.perm(k, order)) + (k - order) * math.log(peak)

    return ScalarFunction(
        name="identity" if k == 1 else f"pow{k}",
        func=lambda z: np.asarray(z) ** k,
        derivative=derivative,
        derivative_bound=bound,
        matrix_func=lambda M: np.linalg.matrix_power(M, k),
    )


def identity_function() -> ScalarFunction:
    return power_function(1)


_REGISTRY: Dict[str, ScalarFunction] = {
    EXP.name: EXP,
    NEXP.name: NEXP,
}


def available_functions():
    return sorted(_REGISTRY)


def get_function(name: str) -> ScalarFunction:
    """Look up a registered function by name."""
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown function '{name}', choose from {', '.join(available_functions())}") from None
