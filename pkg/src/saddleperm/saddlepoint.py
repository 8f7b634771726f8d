"""Saddlepoint equations, the likelihood-ratio-like statistic and the
conditional formal saddlepoint density.

The statistic is the convex dual ``Lambda(x) = tau_hat . x - kappa(tau_hat)``
with ``kappa'(tau_hat) = x``.  Newton's method is run from ``tau = 0`` (or a
caller-supplied warm start) with the step halved until the residual norm
decreases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import DomainError, NoConvergence, OverflowGuard
from .model_cgf import EXPONENT_LIMIT, ModelKind, TiltingModel, canonical_frame

TOL = 1e-11
MAX_ITER = 200
MAX_HALVINGS = 40


@dataclass(frozen=True)
class Saddlepoint:
    tau_hat: np.ndarray
    lam: float
    kappa: float
    hess: np.ndarray
    target: np.ndarray
    iterations: int
    residual: float

    @property
    def logdet_hess(self) -> float:
        return numkit.logdet(self.hess)


@dataclass(frozen=True)
class NewtonBatch:
    """Outcome of a vectorized Newton solve.

    ``status`` is 0 for converged rows, 1 for exhausted iterations and 2 for
    rows stopped by the exponent guard.
    """

    tau: np.ndarray
    kappa: np.ndarray
    lam: np.ndarray
    status: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray

    @property
    def converged(self) -> np.ndarray:
        return self.status == 0


def damped_newton(system, z0: np.ndarray, tol: float = TOL, max_iter: int = MAX_ITER):
    """Row-wise damped Newton for a batch of square systems ``F(z) = 0``.

    ``system(z, rows)`` maps a (b, n) array holding rows ``rows`` of the batch
    to ``(F, J, bad)`` with ``F`` of shape (b, n), Jacobians ``J`` of shape (B, n, n) and a boolean ``bad`` flagging
    rows whose tilt tripped the exponent guard.  A step is halved until the
    residual norm decreases.  Each row keeps its own step length, so a row's
    result does not depend on the other rows in the batch.

    Returns ``(z, F, status, iterations)`` where status is 0 (converged),
    1 (no convergence) or 2 (exponent guard).
    """
    z = np.array(z0, dtype=float, copy=True)
    B, n = z.shape
    F, J, bad = system(z, np.arange(B))
    fnorm = np.sqrt(np.einsum("bd,bd->b", F, F))
    status = np.ones(B, dtype=np.int8)
    status[bad] = 2
    status[(status == 1) & (np.max(np.abs(F), axis=1) <= tol)] = 0
    iters = np.zeros(B, dtype=np.int64)
    active = np.flatnonzero(status == 1)

    for _ in range(max_iter):
        if active.size == 0:
            break
        try:
            step = np.linalg.solve(J[active], F[active][..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.stack([np.linalg.lstsq(j, f, rcond=None)[0] for j, f in zip(J[active], F[active])])
        iters[active] += 1
        t = np.ones(active.size)
        pending = np.arange(active.size)
        accepted = np.zeros(active.size, dtype=bool)
        for _h in range(MAX_HALVINGS):
            rows = active[pending]
            trial = z[rows] - t[pending, None] * step[pending]
            F_t, J_t, bad_t = system(trial, rows)
            n_t = np.sqrt(np.einsum("bd,bd->b", F_t, F_t))
            ok = (n_t < fnorm[rows]) | bad_t
            take = rows[ok]
            z[take], F[take], J[take], fnorm[take] = trial[ok], F_t[ok], J_t[ok], n_t[ok]
            status[take[bad_t[ok]]] = 2
            accepted[pending[ok]] = True
            pending = pending[~ok]
            if pending.size == 0:
                break
            t[pending] *= 0.5
        moved = active[accepted]
        status[moved[(status[moved] == 1) & (np.max(np.abs(F[moved]), axis=1) <= tol)]] = 0
        # rows whose residual cannot be reduced any further stay at status 1
        active = moved[status[moved] == 1]
    return z, F, status, iters


def _newton(evaluate, targets: np.ndarray, start, tol: float, max_iter: int) -> NewtonBatch:
    def system(tau, rows):
        _, grad, hess, mexp = evaluate(tau)
        return grad - targets[rows], hess, mexp > EXPONENT_LIMIT

    tau0 = np.zeros_like(targets) if start is None else np.array(start, dtype=float)
    tau, F, status, iters = damped_newton(system, tau0, tol, max_iter)
    kappa = evaluate(tau)[0]
    lam = np.einsum("bd,bd->b", tau, targets) - kappa
    return NewtonBatch(tau, kappa, lam, status, iters, np.max(np.abs(F), axis=1))


def newton_batch(model: TiltingModel, targets, start=None, tol: float = TOL, max_iter: int = MAX_ITER) -> NewtonBatch:
    """Solve ``kappa'(tau) = target`` for every row of ``targets``."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if targets.shape[1] != model.dim:
        raise DomainError("target has wrong length", expected=model.dim, got=targets.shape[1])
    return _newton(model.evaluate_batch, targets, start, tol, max_iter)


def lattice_newton_batch(model: TiltingModel, x0, start=None, tol: float = TOL, max_iter: int = MAX_ITER) -> NewtonBatch:
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if x0.shape[1] != model.d0:
        raise DomainError("x0 has wrong length", expected=model.d0, got=x0.shape[1])
    return _newton(model.lattice_batch, x0, start, tol, max_iter)


def _single(res: NewtonBatch, target: np.ndarray, hess_fn) -> Saddlepoint:
    if res.status[0] == 2:
        raise OverflowGuard("tilt too large while solving the saddlepoint equation", target=target.tolist())
    if res.status[0] != 0:
        raise NoConvergence(
            "saddlepoint iteration did not converge; target on or outside the mean-domain boundary",
            target=target.tolist(), iterations=int(res.iterations[0]), residual=float(res.residual[0]))
    tau = res.tau[0]
    return Saddlepoint(
        tau_hat=tau, lam=float(res.lam[0]), kappa=float(res.kappa[0]), hess=hess_fn(tau),
        target=target, iterations=int(res.iterations[0]), residual=float(res.residual[0]))


def solve_saddlepoint(model: TiltingModel, target, start=None) -> Saddlepoint:
    """Joint saddlepoint for ``x = target``; ``start`` is an optional warm start."""
    target = np.asarray(target, dtype=float).reshape(-1)
    st = None if start is None else np.asarray(start, dtype=float).reshape(1, -1)
    res = newton_batch(model, target[None, :], st)
    return _single(res, target, lambda t: model.evaluate_batch(t[None, :])[2][0])


def solve_lattice(model: TiltingModel, x0, start=None) -> Saddlepoint:
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    st = None if start is None else np.asarray(start, dtype=float).reshape(1, -1)
    res = lattice_newton_batch(model, x0[None, :], st)
    return _single(res, x0, lambda t: model.lattice_batch(t[None, :])[2][0])


@dataclass(frozen=True)
class ConditionalContext:
    """Everything about the lattice coordinate ``x0`` that the conditional
    density and the radial parameterization need.

    ``V0`` is the Schur complement of the lattice block of kappa''(0), and the
    radial parameterization is ``x1 = center + r V0^{1/2} s``.  ``center`` is
    the minimizer of Lambda(x0, .), which is 0 for both permutation models at
    ``x0 = p``.  ``frame`` is the orthogonal basis in which sphere directions
    are drawn: the canonical frame of the scores for the two-sample model,
    the identity for the k-sample model whose coordinates are groups.
    """

    x0: np.ndarray
    sp0: Saddlepoint
    V0: np.ndarray
    V0_sqrt: np.ndarray
    logdet_V0: float
    logdet_V_tau0: float
    center: np.ndarray
    tau_center: np.ndarray
    hess_center: np.ndarray
    frame: np.ndarray

    @property
    def lambda0(self) -> float:
        return self.sp0.lam

    @property
    def d1(self) -> int:
        return self.V0.shape[0]


def conditional_context(model: TiltingModel, x0=None) -> ConditionalContext:
    x0 = model.p if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    d0 = model.d0
    H0 = model.evaluate_batch(np.zeros((1, model.dim)))[2][0]
    Hinv = numkit.spd_inverse(H0)
    V0 = numkit.spd_inverse(Hinv[d0:, d0:])
    V0_sqrt = numkit.sym_sqrt(V0)
    sp0 = solve_lattice(model, x0)
    tau_c = np.concatenate([sp0.tau_hat, np.zeros(model.d1)])
    _, grad_c, hess_c, _ = model.evaluate_batch(tau_c[None, :])
    if model.kind is ModelKind.TWOSAMPLE_MV:
        frame = canonical_frame(model.scores.scores)
    else:
        frame = np.eye(model.d1)
    return ConditionalContext(
        x0=x0, sp0=sp0, V0=V0, V0_sqrt=V0_sqrt, logdet_V0=numkit.logdet(V0),
        logdet_V_tau0=numkit.logdet(sp0.hess), center=grad_c[0, d0:],
        tau_center=tau_c, hess_center=hess_c[0], frame=frame)


def log_conditional_density(model: TiltingModel, ctx: ConditionalContext, x1, start=None) -> float:
    x1 = np.asarray(x1, dtype=float).reshape(-1)
    sp = solve_saddlepoint(model, np.concatenate([ctx.x0, x1]), start)
    N, d1 = model.N, model.d1
    return (0.5 * ctx.logdet_V_tau0 - N * (sp.lam - ctx.lambda0)
            - 0.5 * d1 * math.log(2 * math.pi / N) - 0.5 * sp.logdet_hess)


def conditional_density(model: TiltingModel, ctx: ConditionalContext, x1, start=None) -> float:
    """Formal saddlepoint density of ``x1`` given the lattice value ``ctx.x0``."""
    return math.exp(log_conditional_density(model, ctx, x1, start))
