"""Small numerical kernels: SPD solves, chi-square tails, quantiles, 1-D search.

These wrap mature library routines (Cholesky factorization, regularized
incomplete gamma, inverse normal CDF) behind the narrow surface the fitting
and testing code needs, so every numerical contract is checked in one place.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaincc, ndtri

__all__ = [
    "NumericError",
    "SpdSolveResult",
    "solve_spd",
    "chi_square_sf",
    "normal_quantile",
    "minimize_scalar",
]


class NumericError(ArithmeticError):
    """A numerical precondition failed (non-SPD matrix, bad domain, bad bracket)."""


@dataclass(frozen=True)
class SpdSolveResult:
    """Solution of A x = b for symmetric positive definite A, plus log det(A)."""

    solution: np.ndarray
    log_det: float


def solve_spd(a: np.ndarray, b: np.ndarray) -> SpdSolveResult:
    """Solve a symmetric positive definite system via Cholesky factorization.

    ``b`` may be a single right-hand side (1-D) or several stacked as columns.
    log det(A) comes from the factor diagonal; the inverse is never formed.

    Raises NumericError if A is not square, not symmetric within 1e-12
    relative, or not positive definite (the latter signals a rank-deficient
    network or degenerate variances upstream).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NumericError(f"matrix is not square: shape {a.shape}")
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if float(np.max(np.abs(a - a.T))) > 1e-12 * max(scale, 1e-300):
        raise NumericError("matrix not symmetric")
    try:
        factor = cho_factor(a, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        raise NumericError("matrix not positive definite") from None
    except ValueError as exc:
        raise NumericError(f"invalid matrix entries: {exc}") from None
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    solution = cho_solve(factor, b, check_finite=False)
    return SpdSolveResult(solution, log_det)


def chi_square_sf(x: float, df: int) -> float:
    """Upper-tail probability P(X > x) for X ~ chi-square with ``df`` degrees.

    Computed as the regularized upper incomplete gamma Q(df/2, x/2).
    """
    if df == 0:
        raise NumericError("zero degrees of freedom")
    if df < 0 or df != int(df):
        raise NumericError(f"degrees of freedom must be a positive integer, got {df!r}")
    if not (x >= 0):
        raise NumericError(f"chi-square statistic must be non-negative, got {x!r}")
    return float(gammaincc(df / 2.0, x / 2.0))


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not (0.0 < p < 1.0):
        raise NumericError(f"quantile requires 0 < p < 1, got {p!r}")
    return float(ndtri(p))


_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _checked(f: Callable[[float], float], x: float) -> float:
    value = float(f(x))
    if not math.isfinite(value):
        raise NumericError(f"objective returned a non-finite value at x={x!r}")
    return value


def minimize_scalar(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-8,
    grid_points: int = 129,
) -> float:
    """Scalar minimizer: coarse grid scan, then golden-section refinement.

    The grid (at least 64 points) localizes the global minimum of possibly
    multimodal objectives; golden-section search on the bracketing cell then
    refines to within ``tol``. For unimodal f the result is within ``tol`` of
    the true argmin.
    """
    if not (lo < hi):
        raise NumericError(f"empty bracket [{lo!r}, {hi!r}]")
    if not (tol > 0):
        raise NumericError("tolerance must be positive")
    xs = np.linspace(lo, hi, max(64, int(grid_points)))
    values = [_checked(f, float(x)) for x in xs]
    best = int(np.argmin(values))
    a = float(xs[max(best - 1, 0)])
    b = float(xs[min(best + 1, len(xs) - 1)])
    if b - a <= tol:
        return float(xs[best])

    c = b - _INV_GOLDEN * (b - a)
    d = a + _INV_GOLDEN * (b - a)
    fc = _checked(f, c)
    fd = _checked(f, d)
    for _ in range(512):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_GOLDEN * (b - a)
            fc = _checked(f, c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_GOLDEN * (b - a)
            fd = _checked(f, d)
    return 0.5 * (a + b)
