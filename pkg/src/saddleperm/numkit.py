"""Special functions and small dense symmetric linear algebra.

Every matrix in this package has dimension at most a dozen or so, so all
routines here are plain unblocked algorithms.  Positive definiteness is
judged against a relative tolerance of ``1e-12``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, NotPositiveDefinite

PD_RTOL = 1e-12

_ITMAX = 1000
_EPS = 1e-16
_TINY = 1e-300


def _gamma_p_series(a: float, x: float) -> float:
    # P(a, x) = e^{-x} x^a / Gamma(a+1) * sum_n x^n / ((a+1)...(a+n))
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_ITMAX):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _ITMAX):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0 or x < 0:
        raise DomainError("gamma_q needs a > 0 and x >= 0", a=a, x=x)
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_p_series(a, x)
    return _gamma_q_contfrac(a, x)


def chi_sq_tail(d: int, x: float) -> float:
    """Return P(chi^2_d >= x).

    Parameters
    ----------
    d : int
        Degrees of freedom, at least 1.
    x : float
        Nonnegative argument.
    """
    if int(d) != d or d < 1:
        raise DomainError("degrees of freedom must be a positive integer", d=d)
    if not x >= 0:
        raise DomainError("chi-square argument must be nonnegative", x=x)
    return min(1.0, max(0.0, gamma_q(0.5 * d, 0.5 * x)))


def _as_symmetric(A) -> np.ndarray:
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError("expected a square matrix", shape=A.shape)
    if not np.array_equal(A, A.T):
        raise DomainError("matrix is not symmetric")
    return A


def cholesky(A) -> np.ndarray:
    """Lower-triangular L with L @ L.T == A.

    Raises NotPositiveDefinite when a pivot falls below ``1e-12`` times the
    largest diagonal entry.
    """
    A = _as_symmetric(A)
    n = A.shape[0]
    tol = PD_RTOL * max(float(np.max(np.diag(A))), 0.0)
    L = np.zeros_like(A)
    for j in range(n):
        pivot = A[j, j] - L[j, :j] @ L[j, :j]
        if not pivot > tol:
            raise NotPositiveDefinite("Cholesky pivot not positive", column=j, pivot=float(pivot))
        L[j, j] = math.sqrt(pivot)
        for i in range(j + 1, n):
            L[i, j] = (A[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def logdet(A) -> float:
    """log |A| for symmetric positive definite A, via Cholesky."""
    L = cholesky(A)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def _eig_checked(A) -> tuple[np.ndarray, np.ndarray]:
    A = _as_symmetric(A)
    w, V = np.linalg.eigh(A)
    if not w[-1] > 0 or w[0] <= PD_RTOL * w[-1]:
        raise NotPositiveDefinite("eigenvalue not positive", eigenvalues=w.tolist())
    return w, V


def sym_sqrt(A) -> np.ndarray:
    """Symmetric square root B of an SPD matrix, B @ B == A."""
    w, V = _eig_checked(A)
    B = (V * np.sqrt(w)) @ V.T
    return 0.5 * (B + B.T)


def sym_inv_sqrt(A) -> np.ndarray:
    """Symmetric inverse square root of an SPD matrix."""
    w, V = _eig_checked(A)
    B = (V / np.sqrt(w)) @ V.T
    return 0.5 * (B + B.T)


def spd_inverse(A) -> np.ndarray:
    L = cholesky(A)
    Linv = np.linalg.solve(L, np.eye(L.shape[0]))
    inv = Linv.T @ Linv
    return 0.5 * (inv + inv.T)


def sphere_area(d: int) -> float:
    """Surface measure 2 pi^{d/2} / Gamma(d/2) of the unit sphere in R^d.

    For d = 1 this is 2, the counting measure of {-1, +1}.
    """
    return 2.0 * math.pi ** (0.5 * d) / math.gamma(0.5 * d)
