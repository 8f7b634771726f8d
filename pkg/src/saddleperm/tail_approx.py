"""Tail probabilities P(Lambda - Lambda_0 >= lambda) by the multivariate
Lugannani-Rice-type and Barndorff-Nielsen-type formulas.

For a direction ``s`` on the unit sphere the level-set point is
``x1 = center + r V0^{1/2} s`` with ``r`` chosen so that
``Lambda(x0, x1) - Lambda_0(x0) = lambda``.  The surface integral

    G(u) = int_{S} delta(u, s) ds,   u = sqrt(2 lambda),

is estimated by Monte Carlo over uniform directions (exactly, as a two-point
sum, when ``d1 = 1``), and then

    p_LR = Qbar_d1(N u^2) + (c_N / N) u^d1 exp(-N u^2 / 2) (G - 1) / u^2
    p_BN = Qbar_d1(N u*^2),   u* = u - log(G) / (N u)

with ``c_N = N^{d1/2} / (2^{d1/2 - 1} Gamma(d1/2))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numkit, rng
from .errors import DegenerateDirection, DomainError, LevelUnreachable, NoConvergence, NonpositiveG, OverflowGuard
from .model_cgf import EXPONENT_LIMIT, TiltingModel
from .saddlepoint import ConditionalContext, Saddlepoint, damped_newton, solve_saddlepoint

DEFAULT_M = 1000
LEVEL_TOL = 1e-12
INNER_GUARD = 1e-12
# below this u the tail is reported as 1 without evaluating G
U_FLOOR = 1e-12


@dataclass(frozen=True)
class DirectionSolve:
    s: np.ndarray
    r: float
    sp: Saddlepoint
    delta: float = math.nan


@dataclass(frozen=True)
class GEstimate:
    """Monte Carlo estimate of G(u) with the per-direction solutions.

    ``values`` are the individual integrand draws ``area * delta(u, U_l)``
    whose mean is ``G`` (for ``d1 = 1`` they are the two signed directions).
    """

    G: float
    G_se: float
    M: int
    seed: int
    directions: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    tau: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    fallbacks: int = 0

    def __iter__(self):
        yield self.G
        yield self.G_se
        yield self.solves()

    def solves(self) -> list[DirectionSolve]:
        area = self.values.size and numkit.sphere_area(self.directions.shape[1])
        out = []
        for s, r, t, v in zip(self.directions, self.r, self.tau, self.values):
            sp = Saddlepoint(t, math.nan, math.nan, np.empty((0, 0)), np.empty(0), 0, math.nan)
            out.append(DirectionSolve(s, float(r), sp, float(v / area)))
        return out


@dataclass(frozen=True)
class TailResult:
    u: float
    lam: float
    G: float
    G_se: float
    u_star: float
    p_lr: float
    p_bn: float
    p_chisq: float
    M: int
    seed: int
    N: int
    d1: int
    lr_clamped: bool = False
    bn_clamped: bool = False
    fallbacks: int = 0

    def to_dict(self) -> dict:
        return {
            "u": self.u, "lambda": self.lam, "G": self.G, "G_se": self.G_se, "u_star": self.u_star,
            "p_lr": self.p_lr, "p_bn": self.p_bn, "p_chisq": self.p_chisq, "M": self.M, "seed": self.seed,
            "N": self.N, "d1": self.d1, "lr_clamped": self.lr_clamped, "bn_clamped": self.bn_clamped,
            "fallbacks": self.fallbacks,
        }


# -- closed-form pieces ------------------------------------------------------

def log_c_n(N: int, d1: int) -> float:
    return 0.5 * d1 * math.log(N) - (0.5 * d1 - 1.0) * math.log(2.0) - math.lgamma(0.5 * d1)


def c_n(N: int, d1: int) -> float:
    """Normalizing constant N^{d1/2} / (2^{d1/2-1} Gamma(d1/2))."""
    return math.exp(log_c_n(N, d1))


def _check_uG(u, G):
    if not u > 0:
        raise DomainError("u must be positive", u=u)
    if not G > 0:
        raise NonpositiveG("G estimate is not positive; increase the number of sphere samples", G=G)


def lr_tail_unclamped(N: int, d1: int, u: float, G: float) -> float:
    _check_uG(u, G)
    chi = numkit.chi_sq_tail(d1, N * u * u)
    if G == 1.0:
        return chi
    log_mag = (log_c_n(N, d1) - math.log(N) + (d1 - 2) * math.log(u) - 0.5 * N * u * u
               + math.log(abs(G - 1.0)))
    return chi + math.copysign(math.exp(log_mag), G - 1.0)


def lr_tail(N: int, d1: int, u: float, G: float) -> float:
    """Lugannani-Rice-type tail probability, clamped to [0, 1]."""
    return min(1.0, max(0.0, lr_tail_unclamped(N, d1, u, G)))


def u_star(N: int, u: float, G: float) -> float:
    _check_uG(u, G)
    return u - math.log(G) / (N * u)


def bn_tail(N: int, d1: int, u: float, G: float) -> float:
    """Barndorff-Nielsen-type tail probability Qbar_d1(N u*^2)."""
    us = u_star(N, u, G)
    return numkit.chi_sq_tail(d1, N * us * us)


# -- level sets ----------------------------------------------------------------

def _lambda_at(model: TiltingModel, ctx: ConditionalContext, x1: np.ndarray, start):
    """(Lambda - Lambda_0, saddlepoint) at x1, or None when the solve fails."""
    try:
        sp = solve_saddlepoint(model, np.concatenate([ctx.x0, x1]), start)
    except (NoConvergence, OverflowGuard):
        return None
    return sp.lam - ctx.lambda0, sp


def radial_root(model: TiltingModel, ctx: ConditionalContext, s, lam: float,
                max_bisections: int = 200) -> DirectionSolve:
    """Radius r at which Lambda - Lambda_0 reaches ``lam`` along direction s.

    The radius is bracketed by doubling from 1/N, then refined by bisection.
    If doubling steps past the feasible region first, the last feasible
    radius and the failing one are bisected until the level is crossed.
    """
    s = np.asarray(s, dtype=float).reshape(-1)
    if not lam > 0:
        raise DomainError("lambda must be positive", lam=lam)
    if abs(np.linalg.norm(s) - 1.0) > 1e-12:
        raise DomainError("direction must be a unit vector", norm=float(np.linalg.norm(s)))
    v = ctx.V0_sqrt @ s
    lo, lo_start = 0.0, ctx.tau_center
    hi = 1.0 / model.N
    hi_sol = None
    while True:
        sol = _lambda_at(model, ctx, ctx.center + hi * v, lo_start)
        if sol is None:
            break
        if sol[0] >= lam:
            hi_sol = sol
            break
        lo, lo_start = hi, sol[1].tau_hat
        hi *= 2.0
    if hi_sol is None:
        # locate the level between the last feasible radius and the boundary
        bad = hi
        for _ in range(max_bisections):
            mid = 0.5 * (lo + bad)
            if mid in (lo, bad):
                break
            sol = _lambda_at(model, ctx, ctx.center + mid * v, lo_start)
            if sol is None:
                bad = mid
            elif sol[0] >= lam:
                hi, hi_sol = mid, sol
                break
            else:
                lo, lo_start = mid, sol[1].tau_hat
        if hi_sol is None:
            raise LevelUnreachable("level not reached before leaving the feasible region",
                                   direction=s.tolist(), lam=lam, last_radius=lo)
    best_r, best = hi, hi_sol
    for _ in range(max_bisections):
        if abs(best[0] - lam) <= LEVEL_TOL:
            break
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        sol = _lambda_at(model, ctx, ctx.center + mid * v, lo_start)
        if sol is None:
            hi = mid
            continue
        if sol[0] >= lam:
            hi = mid
        else:
            lo, lo_start = mid, sol[1].tau_hat
        if abs(sol[0] - lam) < abs(best[0] - lam):
            best_r, best = mid, sol
    return DirectionSolve(s, best_r, best[1])


def log_delta_parts(model: TiltingModel, ctx: ConditionalContext, S: np.ndarray, r: np.ndarray,
                    tau: np.ndarray, logdet_V: np.ndarray, u: float) -> np.ndarray:
    """log delta(u, s) for rows of directions with their level-set solutions."""
    d1 = model.d1
    inner = np.einsum("bi,ij,bj->b", S, ctx.V0_sqrt, tau[:, model.d0:])
    bad = ~(np.abs(inner) > INNER_GUARD)
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateDirection("direction is tangent to the level set", direction=S[i].tolist(),
                                  inner=float(inner[i]))
    return (math.lgamma(0.5 * d1) + 0.5 * ctx.logdet_V_tau0 - 0.5 * logdet_V + 0.5 * ctx.logdet_V0
            + (d1 - 1) * np.log(r) - math.log(2.0) - 0.5 * d1 * math.log(math.pi)
            - (d1 - 2) * math.log(u) - np.log(np.abs(inner)))


def delta(ctx: ConditionalContext, dsolve: DirectionSolve, u: float, model: TiltingModel | None = None) -> float:
    """delta(u, s) at a solved level-set point, evaluated in log space."""
    if not u > 0:
        raise DomainError("u must be positive", u=u)
    d1 = ctx.d1
    d0 = dsolve.sp.tau_hat.size - d1
    tau1 = dsolve.sp.tau_hat[d0:]
    inner = float(dsolve.s @ ctx.V0_sqrt @ tau1)
    if not abs(inner) > INNER_GUARD:
        raise DegenerateDirection("direction is tangent to the level set", direction=dsolve.s.tolist(),
                                  inner=inner)
    logdet_V = dsolve.sp.logdet_hess
    val = (math.lgamma(0.5 * d1) + 0.5 * ctx.logdet_V_tau0 - 0.5 * logdet_V + 0.5 * ctx.logdet_V0
           + (d1 - 1) * math.log(dsolve.r) - math.log(2.0) - 0.5 * d1 * math.log(math.pi)
           - (d1 - 2) * math.log(u) - math.log(abs(inner)))
    return math.exp(val)


def level_set_batch(model: TiltingModel, ctx: ConditionalContext, S: np.ndarray, lam: float,
                    tol: float = 1e-11, max_iter: int = 100):
    """Solve for (tau, r) on the level set along each row of directions ``S``.

    Newton is run jointly on the saddlepoint equations and the level
    equation, starting from the quadratic approximation ``r = u``.  Returns
    ``(tau, r, ok)``; rows with ``ok`` False need the bracketing fallback.
    """
    D, d0 = model.dim, model.d0
    B = S.shape[0]
    u = math.sqrt(2.0 * lam)
    V = S @ ctx.V0_sqrt
    x0 = ctx.x0
    target_level = ctx.lambda0 + lam

    rhs = np.zeros((B, D))
    rhs[:, d0:] = u * V
    tau_start = ctx.tau_center + np.linalg.solve(ctx.hess_center, rhs.T).T
    z0 = np.concatenate([tau_start, np.full((B, 1), u)], axis=1)

    def system(z, rows):
        tau, r = z[:, :D], z[:, D]
        kappa, grad, hess, mexp = model.evaluate_batch(tau)
        b = z.shape[0]
        F = np.empty((b, D + 1))
        F[:, :d0] = grad[:, :d0] - x0
        F[:, d0:D] = grad[:, d0:] - ctx.center - r[:, None] * V[rows]
        F[:, D] = np.einsum("bd,bd->b", tau, grad) - kappa - target_level
        J = np.zeros((b, D + 1, D + 1))
        J[:, :D, :D] = hess
        J[:, d0:D, D] = -V[rows]
        J[:, D, :D] = np.einsum("bde,be->bd", hess, tau)
        return F, J, mexp > EXPONENT_LIMIT

    z, F, status, _ = damped_newton(system, z0, tol, max_iter)
    tau, r = z[:, :D], z[:, D]
    ok = (status == 0) & (r > 0) & (np.abs(F[:, D]) <= 1e-10)
    return tau, r, ok


def _direction_block(model, ctx, lam, u, S):
    tau, r, ok = level_set_batch(model, ctx, S, lam)
    fallbacks = 0
    for i in np.flatnonzero(~ok):
        ds = radial_root(model, ctx, S[i], lam)
        tau[i], r[i] = ds.sp.tau_hat, ds.r
        fallbacks += 1
    hess = model.evaluate_batch(tau)[2]
    sign, logdet_V = np.linalg.slogdet(hess)
    if np.any(sign <= 0):
        raise DegenerateDirection("tilted covariance is not positive definite")
    logd = log_delta_parts(model, ctx, S, r, tau, logdet_V, u)
    return tau, r, np.exp(logd), fallbacks


def estimate_G(model: TiltingModel, ctx: ConditionalContext, lam: float, M: int = DEFAULT_M,
               seed: int = 0, workers: int = 1) -> GEstimate:
    """Monte Carlo estimate of G(sqrt(2 lam)) over M uniform sphere directions.

    Directions come in antithetic pairs ``(z, -z)`` expressed in
    ``ctx.frame``, so the estimate is unchanged by reflections and rotations
    of the scores.  For ``d1 = 1`` the sphere is {-1, +1}, the integral is the exact sum
    delta(u, -1) + delta(u, +1), and ``M`` and ``seed`` are ignored.
    Directions are generated in fixed blocks, so the estimate is bitwise
    reproducible for a given (seed, M) whatever the number of workers.
    """
    if not lam > 0:
        raise DomainError("lambda must be positive", lam=lam)
    if M < 1:
        raise DomainError("M must be at least 1", M=M)
    u = math.sqrt(2.0 * lam)
    d1 = model.d1
    area = numkit.sphere_area(d1)
    if d1 == 1:
        S = np.array([[1.0], [-1.0]])
        tau, r, dl, fb = _direction_block(model, ctx, lam, u, S)
        values = area * dl
        return GEstimate(float(dl.sum()), 0.0, 2, seed, S, r, tau, values, fb)

    def run(block):
        b, start, count = block
        S = rng.antithetic_directions(seed, M, d1, start, count) @ ctx.frame.T
        return S, _direction_block(model, ctx, lam, u, S)

    parts = rng.map_blocks(run, rng.blocks(M), workers)
    S = np.concatenate([p[0] for p in parts])
    tau = np.concatenate([p[1][0] for p in parts])
    r = np.concatenate([p[1][1] for p in parts])
    values = area * np.concatenate([p[1][2] for p in parts])
    fb = sum(p[1][3] for p in parts)
    G = float(np.mean(values))
    return GEstimate(G, _antithetic_se(values), M, seed, S, r, tau, values, fb)


def _antithetic_se(values: np.ndarray) -> float:
    """Standard error of the mean of antithetic pairs (i.i.d. formula if M is odd)."""
    M = values.size
    if M < 2:
        return math.nan
    if M % 2 or M == 2:
        return float(np.std(values, ddof=1) / math.sqrt(M))
    pairs = 0.5 * (values[0::2] + values[1::2])
    return float(np.std(pairs, ddof=1) / math.sqrt(pairs.size))


def tail_probabilities(model: TiltingModel, ctx: ConditionalContext, lam: float, M: int = DEFAULT_M,
                       seed: int = 0, workers: int = 1) -> TailResult:
    """All three tail approximations at level ``lam``."""
    N, d1 = model.N, model.d1
    lam = float(lam)
    if lam < 0:
        if lam < -1e-12:
            raise DomainError("lambda must be nonnegative", lam=lam)
        lam = 0.0
    u = math.sqrt(2.0 * lam)
    if u <= U_FLOOR:
        return TailResult(u, lam, 1.0, 0.0, u, 1.0, 1.0, 1.0, M, seed, N, d1)
    est = estimate_G(model, ctx, lam, M, seed, workers)
    raw_lr = lr_tail_unclamped(N, d1, u, est.G)
    us = u_star(N, u, est.G)
    return TailResult(
        u=u, lam=lam, G=est.G, G_se=est.G_se, u_star=us,
        p_lr=min(1.0, max(0.0, raw_lr)), p_bn=bn_tail(N, d1, u, est.G),
        p_chisq=numkit.chi_sq_tail(d1, N * u * u), M=est.M, seed=seed, N=N, d1=d1,
        lr_clamped=not (0.0 <= raw_lr <= 1.0), bn_clamped=False, fallbacks=est.fallbacks)
