"""Acceptance checks against reference values and tolerances.

Each check prints one ``PASS``/``FAIL`` line.  Run directly for a plain
report (``python3 tests/test_acceptance.py``) or through pytest, where the
lines are printed as the tests run.
"""

from __future__ import annotations

import functools
import math
import sys
import time

import numpy as np
import pytest

from saddleperm import numkit, rng
from saddleperm.cli import table2_data, table3_data
from saddleperm.mc_oracle import Statistic, exact_tail_many, exact_values, mc_tail_many
from saddleperm.model_cgf import GroupDesign, TiltingModel, cgf, standardize_scalar, whiten_multivariate
from saddleperm.perm_tests import ksample_test, twosample_test
from saddleperm.saddlepoint import conditional_context, newton_batch
from saddleperm.tail_approx import estimate_G

TABLE1_U = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
TABLE1 = {
    "chisq": (0.6149, 0.3618, 0.1718, 0.0658, 0.0203, 0.0051, 0.0010),
    "lr": (0.6811, 0.4446, 0.2454, 0.1151, 0.0464, 0.0164, 0.0052),
    "bn": (0.6753, 0.4380, 0.2387, 0.1101, 0.0434, 0.0148, 0.0045),
    "mc_lambda": (0.6758, 0.4328, 0.2365, 0.1087, 0.0423, 0.0142, 0.0041),
    "mc_kw": (0.6583, 0.4027, 0.1921, 0.0652, 0.0135, 0.0012, 0.0000),
}
TABLE2_U = (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
TABLE3_U = (0.3, 0.4, 0.5, 0.6, 0.7)
R = 100_000
SEED = 1


def emit(name: str, ok: bool, detail: str) -> bool:
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}", flush=True)
    return ok


def table1_labels():
    return [f"g{i // 5 + 1}" for i in range(20)]


@functools.lru_cache(maxsize=None)
def table1_sp():
    t0 = time.perf_counter()
    rep = ksample_test(table1_labels(), np.arange(1.0, 21.0), True, TABLE1_U, M=10_000, seed=SEED)
    return rep, time.perf_counter() - t0


@functools.lru_cache(maxsize=None)
def table1_mc():
    t0 = time.perf_counter()
    rep = ksample_test(table1_labels(), np.arange(1.0, 21.0), True, TABLE1_U, M=1000, seed=SEED, mc_reps=R)
    return rep, time.perf_counter() - t0


@functools.lru_cache(maxsize=None)
def table2_run():
    labels, x = table2_data(SEED)
    return ksample_test(labels, x, False, TABLE2_U, M=1000, seed=SEED, mc_reps=R)


@functools.lru_cache(maxsize=None)
def table3_run(scale: float):
    labels, X = table3_data(SEED)
    return twosample_test(labels, X, M=1000, seed=SEED, u_grid=[u * scale for u in TABLE3_U], mc_reps=R)


# -- criteria -----------------------------------------------------------------------

def criterion_1() -> tuple[bool, str]:
    rep, secs = table1_sp()
    chi = [round(p, 4) for p in rep.p_chisq]
    bad = []
    if tuple(chi) != TABLE1["chisq"]:
        bad.append(f"chi2 row {chi}")
    for row, got in (("lr", rep.p_lr), ("bn", rep.p_bn)):
        for u, g, ref in zip(TABLE1_U, got, TABLE1[row]):
            if abs(g - ref) > max(0.002, 0.05 * ref):
                bad.append(f"{row}@{u}: {g:.4f} vs {ref}")
    if secs > 30:
        bad.append(f"runtime {secs:.1f}s")
    detail = (f"LR {[round(p, 4) for p in rep.p_lr]}, BN {[round(p, 4) for p in rep.p_bn]}, "
              f"{secs:.1f}s" + (f"; misses: {bad}" if bad else ""))
    return not bad, detail


def criterion_2() -> tuple[bool, str]:
    rep, secs = table1_mc()
    bad = []
    for row, outs in (("mc_lambda", rep.mc_lambda), ("mc_kw", rep.mc_comparison)):
        for u, o, ref in zip(TABLE1_U, outs, TABLE1[row]):
            se = math.sqrt(ref * (1 - ref) / R)
            if abs(o.tail_prob - ref) > 4 * se + 1e-4:
                bad.append(f"{row}@{u}: {o.tail_prob:.4f} vs {ref}")
    if secs > 120:
        bad.append(f"runtime {secs:.1f}s")
    detail = (f"MC Λ {[round(o.tail_prob, 4) for o in rep.mc_lambda]}, "
              f"MC K-W {[round(o.tail_prob, 4) for o in rep.mc_comparison]}, {secs:.1f}s"
              + (f"; misses: {bad}" if bad else ""))
    return not bad, detail


def _agreement(rep, bad, tag):
    for u, t, o in zip(rep.u_grid, rep.tails, rep.mc_lambda):
        if o.tail_prob < 0.005:
            continue
        for name, p in (("lr", t.p_lr), ("bn", t.p_bn)):
            if abs(p - o.tail_prob) > 4 * o.se + 0.15 * o.tail_prob:
                bad.append(f"{tag} {name}@{u:.3f}: {p:.4f} vs MC {o.tail_prob:.4f}")


def criterion_3() -> tuple[bool, str]:
    bad = []
    runs = {"table2": table2_run(), "table3": table3_run(1.0), "table3/sqrt2": table3_run(1 / math.sqrt(2))}
    cells = 0
    for tag, rep in runs.items():
        _agreement(rep, bad, tag)
        cells += sum(o.tail_prob >= 0.005 for o in rep.mc_lambda)
    chi = numkit.chi_sq_tail(3, 40 * 0.25)
    if round(chi, 4) != 0.0186:
        bad.append(f"chi2_3(10) = {chi}")
    return not bad, f"{cells} cells with p >= 0.005 compared, chi2_3(10) = {chi:.4f}" + (
        f"; misses: {bad}" if bad else "")


def _ranks_model(sizes):
    return TiltingModel.ksample(standardize_scalar(np.arange(1.0, sum(sizes) + 1)), GroupDesign(sizes))


def criterion_4() -> tuple[bool, str]:
    r = np.random.default_rng(7)
    designs = [
        ("ranks (2,2,2)", _ranks_model((2, 2, 2)), Statistic.LAMBDA),
        ("ranks (4,4)", _ranks_model((4, 4)), Statistic.LAMBDA),
        ("ranks (3,3,3) K-W", _ranks_model((3, 3, 3)), Statistic.KRUSKAL_WALLIS),
        ("exp (4,5) ANOV", TiltingModel.ksample(standardize_scalar(r.exponential(size=9)), GroupDesign((4, 5))),
         Statistic.ANOVA_SS),
        ("2-var (5,5)", TiltingModel.twosample(whiten_multivariate(r.exponential(size=(10, 2))),
                                               GroupDesign((5, 5))), Statistic.LAMBDA),
        ("2-var (5,5) quad", TiltingModel.twosample(whiten_multivariate(r.exponential(size=(10, 2))),
                                                    GroupDesign((5, 5))), Statistic.QUADRATIC),
    ]
    bad = []
    for name, model, stat in designs:
        values, _ = exact_values(model, stat)
        ts = np.quantile(values, [0.1, 0.3, 0.5, 0.7, 0.9])
        exact = exact_tail_many(model, stat, ts)
        mc = mc_tail_many(model, stat, ts, R, seed=SEED)
        for e, m in zip(exact, mc):
            se = math.sqrt(e.tail_prob * (1 - e.tail_prob) / R)
            if abs(e.tail_prob - m.tail_prob) > 4 * se + 1e-12:
                bad.append(f"{name}@{e.threshold:.4g}")
    return not bad, f"{len(designs)} designs x 5 thresholds" + (f"; misses: {bad}" if bad else "")


def _properties() -> list[tuple[str, bool]]:
    out = []
    t1 = _ranks_model((5, 5, 5, 5))
    labels3, X3 = table3_data(SEED)
    t3 = TiltingModel.twosample(whiten_multivariate(X3), GroupDesign((40, 40)))
    ctx1 = conditional_context(t1)

    ok = True
    for model in (t1, t3):
        targets = model.evaluate_batch(1.5 * np.random.default_rng(1).normal(size=(1000, model.dim)), False)[1]
        res = newton_batch(model, targets)
        ok &= bool(np.all(res.converged) and res.residual.max() <= 1e-10)
    out.append(("saddlepoint residual <= 1e-10 on 1000 targets", ok))

    ok = True
    h = 1e-5
    for model in (t1, t3):
        for tau in np.random.default_rng(2).uniform(-0.5, 0.5, size=(20, model.dim)):
            v = cgf(model, tau)
            for j in range(model.dim):
                e = np.zeros(model.dim)
                e[j] = h
                fp, fm = cgf(model, tau + e), cgf(model, tau - e)
                ok &= abs((fp.kappa - fm.kappa) / (2 * h) - v.grad[j]) <= 1e-6
                ok &= bool(np.all(np.abs((fp.grad - fm.grad) / (2 * h) - v.hess[:, j]) <= 1e-4))
    out.append(("finite-difference gradient/Hessian", bool(ok)))

    ok = True
    for x in (np.arange(1.0, 21.0), rng.stream(3, rng.DATA).exponential(size=40)):
        a = standardize_scalar(x).column
        ok &= abs(a.sum()) <= 1e-10 and abs(a @ a - a.size) <= 1e-10 * a.size
    a = t3.scores.scores
    ok &= bool(np.all(np.abs(a.sum(axis=0)) <= 1e-10) and np.all(np.abs(a.T @ a - 80 * np.eye(3)) <= 1e-10 * 80))
    out.append(("standardization invariants", bool(ok)))

    def numbers(rep):
        t = rep.tail
        return np.array([rep.lambda_obs, rep.u_obs, t.G, t.p_lr, t.p_bn, t.p_chisq, rep.comparison])

    labels2, x2 = table2_data(SEED)
    base = ksample_test(labels2, x2, False, M=500, seed=2)
    moved = ksample_test(labels2, -2.5 * x2 + 7.0, False, M=500, seed=2)
    ok = bool(np.allclose(numbers(base), numbers(moved), rtol=1e-8, atol=1e-12))
    A = np.array([[1.0, 2.0, 0.0], [0.0, -1.0, 0.5], [0.3, 0.0, 2.0]])
    base = twosample_test(labels3, X3, M=500, seed=2)
    moved = twosample_test(labels3, X3 @ A.T + 3.0, M=500, seed=2)
    ok &= bool(np.allclose(numbers(base), numbers(moved), rtol=1e-8, atol=1e-12))
    out.append(("affine invariance of reports", ok))

    ok = True
    for model in (t1, t3):
        g = np.random.default_rng(4).permuted(np.tile(model.design.base_assignment(), (200, 1)), axis=1)
        X1 = 0.95 * model.target_from_assignment(g)[:, model.d0:]

        def lam(x1):
            return newton_batch(model, np.c_[np.tile(model.p, (len(x1), 1)), x1]).lam

        ok &= bool(np.all(lam(0.5 * (X1[:100] + X1[100:])) <= 0.5 * (lam(X1[:100]) + lam(X1[100:])) + 1e-10))
        for v in X1[:10]:
            ok &= bool(np.all(np.diff(lam(np.linspace(0, 1, 50)[:, None] * v)) >= -1e-14))
    out.append(("Lambda convexity and ray monotonicity", ok))

    G = estimate_G(t1, ctx1, 1e-8, M=1000, seed=SEED).G
    out.append((f"G -> 1 at lambda=1e-8 (G={G:.5f})", abs(G - 1) <= 0.02))

    small = estimate_G(t1, ctx1, 0.18, M=10, seed=SEED)
    big = estimate_G(t1, ctx1, 0.18, M=10_000, seed=SEED + 1)
    out.append((f"M=10 vs M=1e4 ({small.G:.4f} vs {big.G:.4f})",
                abs(small.G - big.G) <= 4 * math.hypot(small.G_se, big.G_se)))

    reps = [table1_sp()[0], table2_run(), table3_run(1.0), table3_run(1 / math.sqrt(2))]
    ratio = max(abs(t.p_lr - t.p_bn) / max(t.p_lr, t.p_bn) for rep in reps for t in rep.tails)
    out.append((f"|p_lr - p_bn| <= 25% on table cells (max {ratio:.1%})", ratio <= 0.25))

    ctx3 = conditional_context(t3)
    g = [estimate_G(t3, ctx3, 0.05, M=3000, seed=9, workers=w).values.tobytes() for w in (1, 2, 4)]
    m = [tuple(o.count for o in mc_tail_many(t1, Statistic.LAMBDA, [0.1, 0.3], 5000, seed=9, workers=w))
         for w in (1, 3)]
    out.append(("bitwise determinism across worker counts", g[0] == g[1] == g[2] and m[0] == m[1]))
    return out


def criterion_5() -> tuple[bool, str]:
    props = _properties()
    failed = [name for name, ok in props if not ok]
    return not failed, f"{len(props) - len(failed)}/{len(props)} properties" + (
        f"; failing: {failed}" if failed else "")


def criterion_6() -> tuple[bool, str]:
    labels, x = table2_data(SEED)
    labels = ["a"] * 18 + ["b"] * 22
    worst = 0.0
    for data in (x, rng.stream(SEED, rng.DATA, 1).permutation(np.arange(1.0, 41.0))):
        k = ksample_test(labels, data, False, M=10)
        t = twosample_test(labels, data[:, None], M=10)
        worst = max(worst, abs(k.tail.p_bn - t.tail.p_bn))
        kg = ksample_test(labels, data, False, u_grid=(0.2, 0.4, 0.6), M=10)
        tg = twosample_test(labels, data[:, None], u_grid=(0.2, 0.4, 0.6), M=10)
        worst = max(worst, max(abs(a - b) for a, b in zip(kg.p_bn, tg.p_bn)))
    return worst <= 1e-8, f"max |p_bn difference| = {worst:.2e}"


CRITERIA = [
    ("1 table1 saddlepoint rows", criterion_1),
    ("2 table1 Monte Carlo rows", criterion_2),
    ("3 table2 and table3 agreement pattern", criterion_3),
    ("4 exact vs Monte Carlo oracle", criterion_4),
    ("5 property suites", criterion_5),
    ("6 cross-model consistency", criterion_6),
]


@pytest.mark.parametrize("name, check", CRITERIA, ids=[c[0].split()[0] for c in CRITERIA])
def test_acceptance(name, check, capsys):
    ok, detail = check()
    with capsys.disabled():
        emit(f"criterion {name}", ok, detail)
    assert ok, detail


if __name__ == "__main__":
    results = []
    for name, check in CRITERIA:
        ok, detail = check()
        results.append(emit(f"criterion {name}", ok, detail))
    sys.exit(0 if all(results) else 1)
