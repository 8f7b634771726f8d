"""Ground-truth permutation distributions.

``mc_tail`` samples uniform random permutations of the group assignment and
``exact_tail`` enumerates every distinct assignment.  Both evaluate either
the likelihood-ratio-like statistic or one of the classical comparators:

* Kruskal-Wallis H on (mid)ranks, with the usual tie correction,
* the between-group sum of squares ``sum n_i (xbar_i - xbar)^2``,
* the squared norm of the sample-1 mean of whitened vectors.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import DomainError, TooLarge
from .model_cgf import ModelKind, TiltingModel, midranks
from .saddlepoint import ConditionalContext, conditional_context, newton_batch

EXACT_CAP = 1_000_000
CHUNK = 4096


class Statistic(str, enum.Enum):
    LAMBDA = "Lambda"
    KRUSKAL_WALLIS = "KruskalWallis"
    ANOVA_SS = "AnovaSS"
    QUADRATIC = "Quadratic"


@dataclass(frozen=True)
class PermutationOutcome:
    statistic: Statistic
    threshold: float
    tail_prob: float
    count: int
    replicates: int
    se: float
    exact: bool = False
    boundary: int = 0
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic.value, "threshold": self.threshold, "tail_prob": self.tail_prob,
            "count": self.count, "replicates": self.replicates, "se": self.se, "exact": self.exact,
            "boundary": self.boundary, "seed": self.seed,
        }


# -- statistics ----------------------------------------------------------------

def lambda_batch(model: TiltingModel, ctx: ConditionalContext, assignments: np.ndarray):
    """Lambda(x) - Lambda_0(x0) for each assignment row.

    Returns ``(values, boundary)``; rows whose saddlepoint does not converge
    lie on the boundary of the mean domain and get ``values = inf``.
    """
    targets = model.target_from_assignment(np.atleast_2d(assignments))
    res = newton_batch(model, targets)
    values = res.lam - ctx.lambda0
    boundary = ~res.converged
    values = np.where(boundary, np.inf, values)
    return values, boundary


def _group_sums(values: np.ndarray, assignments: np.ndarray, k: int) -> np.ndarray:
    # (R, k) sums of a scalar column per group
    return np.stack([(assignments == i) @ values for i in range(k)], axis=1)


def classical_batch(kind: Statistic, model: TiltingModel, assignments: np.ndarray) -> np.ndarray:
    g = np.atleast_2d(assignments)
    sizes = np.array(model.design.sizes, dtype=float)
    if kind is Statistic.KRUSKAL_WALLIS or kind is Statistic.ANOVA_SS:
        if model.kind is not ModelKind.KSAMPLE:
            raise DomainError(f"{kind.value} needs scalar k-sample scores")
        x = model.scores.column
        if kind is Statistic.KRUSKAL_WALLIS:
            x = midranks(x)
        c = x - x.mean()
        sums = _group_sums(c, g, model.design.k)
        between = np.sum(sums ** 2 / sizes, axis=1)
        if kind is Statistic.ANOVA_SS:
            return between
        # tie-corrected H = (N - 1) * between / total
        return (x.size - 1) * between / float(c @ c)
    if kind is Statistic.QUADRATIC:
        if model.kind is not ModelKind.TWOSAMPLE_MV:
            raise DomainError("Quadratic needs the two-sample multivariate model")
        means = ((g == 0).astype(float) @ model.scores.scores) / sizes[0]
        return np.einsum("bi,bi->b", means, means)
    raise DomainError("not a classical statistic", kind=str(kind))


def classical_statistic(kind: Statistic, model: TiltingModel, assignment) -> float:
    """Classical comparator for a single assignment."""
    return float(classical_batch(Statistic(kind), model, np.asarray(assignment)[None, :])[0])


def comparison_threshold(kind: Statistic, model: TiltingModel, u: float) -> float:
    """Threshold on a statistic's own scale matching the level u^2/2 of Lambda.

    Lambda is compared with u^2/2.  Each classical statistic is compared
    through its quadratic form in standardized scores, which is
    approximately chi-square and is matched with ``N u^2``:

    * between-group SS of scores with sum a^2 = N: ``SS >= N u^2``;
    * Kruskal-Wallis, ``H = (N - 1) SS / N`` on standardized ranks:
      ``H >= (N - 1) u^2``;
    * whitened two-sample mean, ``(N p / q) |xbar_1|^2 >= N u^2``.
    """
    kind = Statistic(kind)
    N = model.N
    if kind is Statistic.LAMBDA:
        return 0.5 * u * u
    if kind is Statistic.ANOVA_SS:
        return N * u * u
    if kind is Statistic.KRUSKAL_WALLIS:
        return (N - 1) * u * u
    p, q = model.design.proportions
    return u * u * q / p


def _evaluator(model: TiltingModel, statistic: Statistic, ctx: ConditionalContext | None):
    if statistic is Statistic.LAMBDA:
        ctx = ctx or conditional_context(model)
        return lambda g: lambda_batch(model, ctx, g)
    return lambda g: (classical_batch(statistic, model, g), np.zeros(g.shape[0], dtype=bool))


# -- Monte Carlo -----------------------------------------------------------------

def mc_values(model: TiltingModel, statistic: Statistic, R: int, seed: int, workers: int = 1,
              ctx: ConditionalContext | None = None):
    """Statistic values for R random permutations, as ``(values, boundary)``."""
    if R < 1:
        raise DomainError("need at least one replicate", R=R)
    statistic = Statistic(statistic)
    evaluate = _evaluator(model, statistic, ctx)
    base = model.design.base_assignment()

    def run(block):
        b, _, c = block
        g = rng.stream(seed, rng.PERMUTATION, b).permuted(np.tile(base, (c, 1)), axis=1)
        return evaluate(g)

    parts = rng.map_blocks(run, rng.blocks(R), workers)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def tally(values, boundary, statistic, thresholds, exact=False, seed=None) -> list[PermutationOutcome]:
    """Tail counts of ``values`` at each threshold."""
    R = values.size
    out = []
    for t in thresholds:
        hit = values >= t
        count = int(np.count_nonzero(hit))
        p = count / R
        se = 0.0 if exact else math.sqrt(p * (1 - p) / R)
        out.append(PermutationOutcome(statistic, float(t), p, count, R, se, exact,
                                      int(np.count_nonzero(boundary & hit)), seed))
    return out


def mc_tail_many(model: TiltingModel, statistic: Statistic, thresholds, R: int, seed: int,
                 workers: int = 1, ctx: ConditionalContext | None = None) -> list[PermutationOutcome]:
    statistic = Statistic(statistic)
    values, boundary = mc_values(model, statistic, R, seed, workers, ctx)
    return tally(values, boundary, statistic, list(thresholds), False, seed)


def mc_tail(model: TiltingModel, statistic: Statistic, threshold: float, R: int, seed: int,
            workers: int = 1) -> PermutationOutcome:
    """Monte Carlo permutation tail frequency ``P(T >= threshold)``.

    Replicates come from fixed-size blocks of seeded streams, so the tally is
    identical for any number of workers.
    """
    return mc_tail_many(model, statistic, [threshold], R, seed, workers)[0]


# -- exact enumeration ---------------------------------------------------------------

def arrangement_count(sizes) -> int:
    total = math.factorial(sum(sizes))
    for n in sizes:
        total //= math.factorial(n)
    return total


def multiset_permutations(items):
    """Distinct permutations of ``items`` in lexicographic order."""
    a = sorted(items)
    n = len(a)
    while True:
        yield tuple(a)
        i = n - 2
        while i >= 0 and a[i] >= a[i + 1]:
            i -= 1
        if i < 0:
            return
        j = n - 1
        while a[j] <= a[i]:
            j -= 1
        a[i], a[j] = a[j], a[i]
        a[i + 1:] = reversed(a[i + 1:])


def exact_values(model: TiltingModel, statistic: Statistic, ctx: ConditionalContext | None = None):
    sizes = model.design.sizes
    total = arrangement_count(sizes)
    if total > EXACT_CAP:
        raise TooLarge("too many arrangements to enumerate", arrangements=total, cap=EXACT_CAP)
    evaluate = _evaluator(model, Statistic(statistic), ctx)
    perms = np.array(list(multiset_permutations(model.design.base_assignment().tolist())), dtype=np.int64)
    vals, bnd = [], []
    for s in range(0, total, CHUNK):
        v, b = evaluate(perms[s:s + CHUNK])
        vals.append(v)
        bnd.append(b)
    return np.concatenate(vals), np.concatenate(bnd)


def exact_tail_many(model: TiltingModel, statistic: Statistic, thresholds,
                    ctx: ConditionalContext | None = None) -> list[PermutationOutcome]:
    statistic = Statistic(statistic)
    values, boundary = exact_values(model, statistic, ctx)
    return tally(values, boundary, statistic, list(thresholds), True, None)


def exact_tail(model: TiltingModel, statistic: Statistic, threshold: float) -> PermutationOutcome:
    """Exact permutation tail probability by enumerating all assignments."""
    return exact_tail_many(model, statistic, [threshold])[0]
