"""Finite-population exponential-tilting models.

Both permutation models share one structure.  Population element ``m`` falls
into category ``c`` (``c = 0`` is the baseline) with probability ``pi_c`` and
then contributes the feature vector ``f[m, c]`` (zero for the baseline) to the
sum ``S``.  The average cumulant generating function is

    kappa(tau) = N^-1 sum_m log( pi_0 + sum_{c>=1} pi_c exp(tau . f[m, c]) )

* k-sample: categories are groups 1..k-1 (group k is the baseline), and
  ``f[m, i] = (e_i, a_m e_i)`` so ``tau = (tau_0, tau_1)`` has length 2(k-1).
* two-sample multivariate: one category (sample 1) with probability ``p`` and
  ``f[m, 1] = (1, a_m)`` so ``tau`` has length 1 + l.

The lattice coordinates come first in ``tau``; the lattice-only function
``kappa_0(tau_0) = kappa((tau_0, 0))`` has the closed form
``log(pi_0 + sum_c pi_c exp(tau_0 . e_c))``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import numkit
from .errors import DegenerateScores, DomainError, OverflowGuard, SingularCovariance

EXPONENT_LIMIT = 700.0


class ModelKind(str, enum.Enum):
    KSAMPLE = "ksample"
    TWOSAMPLE_MV = "twosample"


@dataclass(frozen=True)
class ScoreSet:
    """Standardized finite-population scores, shape ``(N, d)``."""

    scores: np.ndarray

    def __post_init__(self):
        a = np.array(self.scores, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        a.setflags(write=False)
        object.__setattr__(self, "scores", a)

    @property
    def N(self) -> int:
        return self.scores.shape[0]

    @property
    def dim(self) -> int:
        return self.scores.shape[1]

    @property
    def column(self) -> np.ndarray:
        """The scalar score column (only meaningful when ``dim == 1``)."""
        return self.scores[:, 0]


@dataclass(frozen=True)
class GroupDesign:
    sizes: tuple[int, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        if len(sizes) < 2 or any(n < 1 for n in sizes):
            raise DomainError("need at least two nonempty groups", sizes=sizes)
        object.__setattr__(self, "sizes", sizes)
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(f"g{i + 1}" for i in range(len(sizes))))
        elif len(self.labels) != len(sizes):
            raise DomainError("one label per group required")

    @property
    def k(self) -> int:
        return len(self.sizes)

    @property
    def N(self) -> int:
        return sum(self.sizes)

    @property
    def proportions(self) -> np.ndarray:
        return np.array(self.sizes, dtype=float) / self.N

    def base_assignment(self) -> np.ndarray:
        """Group index of each position in the order group 0 first, then 1, ..."""
        return np.repeat(np.arange(self.k), self.sizes)


def midranks(values) -> np.ndarray:
    return rankdata(np.asarray(values, dtype=float), method="average")


def standardize_scalar(raw) -> ScoreSet:
    """Center and scale scores so that sum a = 0 and sum a^2 = N."""
    x = np.asarray(raw, dtype=float).ravel()
    N = x.size
    if N < 2:
        raise DomainError("need at least two scores", N=N)
    c = x - x.mean()
    ss = float(c @ c)
    if ss <= 1e-12 * N * float(np.max(np.abs(x))) ** 2 or ss == 0.0:
        raise DegenerateScores("scores are constant", sum_of_squares=ss)
    a = c * np.sqrt(N / ss)
    # a second centering pass removes the rounding left by the first
    a -= a.mean()
    a *= np.sqrt(N / float(a @ a))
    return ScoreSet(a)


def whiten_multivariate(raw) -> ScoreSet:
    """Affinely standardize vectors so that sum a = 0 and sum a a^T = N I.

    Uses the symmetric inverse square root of the centered cross-product
    matrix, so data already in standard form is returned unchanged.
    """
    X = np.asarray(raw, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N, l = X.shape
    if N <= l:
        raise DomainError("need more observations than dimensions", N=N, l=l)
    C = X - X.mean(axis=0)
    S = C.T @ C
    S = 0.5 * (S + S.T)
    w = np.linalg.eigvalsh(S)
    if not w[-1] > 0 or w[0] <= 1e-10 * w[-1]:
        raise SingularCovariance("centered covariance is singular", eigenvalues=w.tolist())
    a = np.sqrt(N) * C @ numkit.sym_inv_sqrt(S)
    a -= a.mean(axis=0)
    return ScoreSet(a)


def canonical_frame(scores) -> np.ndarray:
    """Orthogonal frame attached to a set of whitened score vectors.

    Columns are eigenvectors of the fourth-moment matrix ``N^-1 sum |a|^2 a a^T``
    in decreasing eigenvalue order, each signed so that the third moment of
    the scores along it is nonnegative.  Rotating or reflecting the scores
    rotates the frame with them, so quantities expressed in this frame do not
    depend on the orientation chosen by the whitening.  Ties among the
    eigenvalues leave the frame arbitrary within the tied subspace.
    """
    a = np.asarray(scores, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    M4 = (a * np.einsum("nd,nd->n", a, a)[:, None]).T @ a / a.shape[0]
    w, E = np.linalg.eigh(0.5 * (M4 + M4.T))
    E = E[:, ::-1]
    skew = np.sum((a @ E) ** 3, axis=0)
    E = E * np.where(skew < 0, -1.0, 1.0)
    return E


@dataclass(frozen=True)
class CgfValue:
    kappa: float
    grad: np.ndarray
    hess: np.ndarray


@dataclass(frozen=True, eq=False)
class TiltingModel:
    """kappa, kappa' and kappa'' of a conditional permutation model.

    Build with :meth:`ksample` or :meth:`twosample`.
    """

    kind: ModelKind
    scores: ScoreSet
    design: GroupDesign
    d0: int
    d1: int
    features: np.ndarray = field(repr=False)  # (N, K, d0 + d1)
    log_pi: np.ndarray = field(repr=False)  # (K + 1,), baseline first
    lattice_features: np.ndarray = field(repr=False)  # (K, d0)

    @classmethod
    def ksample(cls, scores: ScoreSet, design: GroupDesign) -> TiltingModel:
        if scores.dim != 1:
            raise DomainError("k-sample model takes scalar scores")
        if scores.N != design.N:
            raise DomainError("score count does not match design", N=scores.N, design_N=design.N)
        k = design.k
        K = k - 1
        a = scores.column
        eye = np.eye(K)
        F = np.zeros((scores.N, K, 2 * K))
        F[:, :, :K] = eye
        F[:, :, K:] = a[:, None, None] * eye
        p = design.proportions
        log_pi = np.log(np.concatenate([[p[-1]], p[:-1]]))
        return cls(ModelKind.KSAMPLE, scores, design, K, K, F, log_pi, eye)

    @classmethod
    def twosample(cls, scores: ScoreSet, design: GroupDesign) -> TiltingModel:
        if design.k != 2:
            raise DomainError("two-sample model takes exactly two groups", k=design.k)
        if scores.N != design.N:
            raise DomainError("score count does not match design", N=scores.N, design_N=design.N)
        N, l = scores.scores.shape
        F = np.ones((N, 1, 1 + l))
        F[:, 0, 1:] = scores.scores
        p, q = design.proportions
        log_pi = np.log(np.array([q, p]))
        return cls(ModelKind.TWOSAMPLE_MV, scores, design, 1, l, F, log_pi, np.ones((1, 1)))

    @property
    def N(self) -> int:
        return self.scores.N

    @property
    def dim(self) -> int:
        return self.d0 + self.d1

    @property
    def p(self) -> np.ndarray:
        """Lattice centre: the proportions of the non-baseline groups."""
        return np.exp(self.log_pi[1:])

    # -- evaluation --------------------------------------------------------

    def evaluate_batch(self, taus: np.ndarray, need_hess: bool = True):
        """Vectorized kappa, gradient and Hessian for ``taus`` of shape (B, D).

        Returns ``(kappa, grad, hess, max_exponent)``; ``hess`` is None when
        not requested.  ``max_exponent`` is the largest ``|tau . f|`` per row,
        which callers compare against :data:`EXPONENT_LIMIT`.
        """
        F = self.features
        N = F.shape[0]
        eta = np.einsum("nkd,bd->bnk", F, taus)
        max_exp = np.max(np.abs(eta), axis=(1, 2))
        eta = eta + self.log_pi[1:]
        mx = np.maximum(eta.max(axis=2), self.log_pi[0])
        ex = np.exp(eta - mx[..., None])
        s = np.exp(self.log_pi[0] - mx) + ex.sum(axis=2)
        lse = mx + np.log(s)
        kappa = lse.mean(axis=1)
        w = ex / s[..., None]
        g = np.einsum("bnk,nkd->bnd", w, F)
        grad = g.mean(axis=1)
        hess = None
        if need_hess:
            wf = w[..., None] * F
            hess = (np.einsum("bnkd,nke->bde", wf, F) - np.einsum("bnd,bne->bde", g, g)) / N
            hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
        return kappa, grad, hess, max_exp

    def lattice_batch(self, tau0: np.ndarray):
        """Closed-form kappa_0 with gradient and Hessian for (B, d0) tilts."""
        E = self.lattice_features
        eta = tau0 @ E.T
        max_exp = np.max(np.abs(eta), axis=1)
        eta = eta + self.log_pi[1:]
        mx = np.maximum(eta.max(axis=1), self.log_pi[0])
        ex = np.exp(eta - mx[:, None])
        s = np.exp(self.log_pi[0] - mx) + ex.sum(axis=1)
        kappa = mx + np.log(s)
        w = ex / s[:, None]
        grad = w @ E
        hess = np.einsum("bk,kd,ke->bde", w, E, E) - np.einsum("bd,be->bde", grad, grad)
        hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
        return kappa, grad, hess, max_exp

    # -- permutation statistics ------------------------------------------

    def target_from_assignment(self, assignment) -> np.ndarray:
        """Joint mean ``x = (p, x_1)`` induced by a group assignment.

        ``assignment`` holds a group index per population element (or a batch
        of such rows).  For the k-sample model ``x_1[i]`` is the score sum of
        group ``i`` divided by N, for the first k-1 groups; for the two-sample
        model ``x_1`` is the score-vector sum of group 0 divided by N.
        """
        g = np.asarray(assignment)
        single = g.ndim == 1
        g = np.atleast_2d(g)
        N = self.N
        if g.shape[1] != N:
            raise DomainError("assignment length does not match population", length=g.shape[1], N=N)
        counts = np.stack([(g == i).sum(axis=1) for i in range(self.design.k)], axis=1)
        if np.any(counts != np.array(self.design.sizes)):
            raise DomainError("assignment is inconsistent with the design sizes")
        if self.kind is ModelKind.KSAMPLE:
            a = self.scores.column
            x1 = np.stack([((g == i) * a).sum(axis=1) for i in range(self.d1)], axis=1) / N
        else:
            x1 = ((g == 0).astype(float) @ self.scores.scores) / N
        x0 = np.broadcast_to(self.p, (g.shape[0], self.d0))
        x = np.concatenate([x0, x1], axis=1)
        return x[0] if single else x


def _check_finite(v, name):
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise DomainError(f"{name} must be finite")
    return v


def cgf(model: TiltingModel, tau) -> CgfValue:
    """kappa(tau) with analytic gradient and Hessian."""
    tau = _check_finite(tau, "tau").reshape(-1)
    if tau.size != model.dim:
        raise DomainError("tau has wrong length", expected=model.dim, got=tau.size)
    kappa, grad, hess, max_exp = model.evaluate_batch(tau[None, :])
    if max_exp[0] > EXPONENT_LIMIT:
        raise OverflowGuard("tilt too large", max_exponent=float(max_exp[0]))
    return CgfValue(float(kappa[0]), grad[0], hess[0])


def cgf_lattice(model: TiltingModel, tau0) -> CgfValue:
    """kappa_0(tau_0) = kappa((tau_0, 0)) through its closed form."""
    tau0 = _check_finite(tau0, "tau0").reshape(-1)
    if tau0.size != model.d0:
        raise DomainError("tau0 has wrong length", expected=model.d0, got=tau0.size)
    kappa, grad, hess, max_exp = model.lattice_batch(tau0[None, :])
    if max_exp[0] > EXPONENT_LIMIT:
        raise OverflowGuard("tilt too large", max_exponent=float(max_exp[0]))
    return CgfValue(float(kappa[0]), grad[0], hess[0])
