"""Command-line interface.

    saddleperm ksample   --input data.csv [--scores rank|raw] [--u-grid 0.3,0.5]
    saddleperm twosample --input data.csv [--u-grid ...]
    saddleperm table1 | table2 | table3 [--sphere-samples M] [--mc-reps R]

``ksample`` reads ``group,value`` rows and ``twosample`` reads
``group,v1,...,vl`` rows.  The table commands need no input: ``table1`` uses
the ranks 1..20 in four groups of five, ``table2`` and ``table3`` draw fresh
exponential data from the seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, rng
from .errors import DomainError, MalformedCsv, MixedArity, SaddlepermError
from .mc_oracle import Statistic
from .perm_tests import GridReport, TestReport, ksample_test, twosample_test

SCHEMA_VERSION = 1

DEFAULT_GRIDS = {
    "table1": (0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    "table2": (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8),
    "table3": (0.3, 0.4, 0.5, 0.6, 0.7),
}

ROW_LABELS = {
    Statistic.KRUSKAL_WALLIS: "MC K-W",
    Statistic.ANOVA_SS: "MC ANOV",
    Statistic.QUADRATIC: "Quadratic",
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    input: str | None = None
    scores: str = "rank"
    u_grid: tuple[float, ...] = ()
    M: int = 1000
    mc_reps: int = 0
    seed: int = 1
    format: str = "text"
    output: str | None = None
    workers: int = 1

    def __post_init__(self):
        if self.M < 1:
            raise DomainError("sphere samples must be at least 1", M=self.M)
        if self.mc_reps < 0:
            raise DomainError("mc-reps must be nonnegative", mc_reps=self.mc_reps)
        g = self.u_grid
        if any(u <= 0 for u in g) or any(b <= a for a, b in zip(g, g[1:])):
            raise DomainError("u grid must be positive and strictly increasing", u_grid=list(g))

    def to_dict(self) -> dict:
        return {"command": self.command, "input": self.input, "scores": self.scores,
                "u_grid": list(self.u_grid), "M": self.M, "mc_reps": self.mc_reps, "seed": self.seed}


# -- input -------------------------------------------------------------------------

def parse_input(path, command: str):
    """Read a CSV dataset.

    Returns ``(labels, values)`` for ``ksample`` (values is 1-d) and
    ``(labels, vectors)`` for ``twosample`` (vectors is ``(N, l)``).
    """
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise MalformedCsv("empty file: a header row is required", line=1)
    header = [h.strip() for h in rows[0]]
    if header[0] != "group":
        raise MalformedCsv("first column must be 'group'", line=1, header=header)
    if command == "ksample" and header != ["group", "value"]:
        raise MalformedCsv("k-sample input needs the header 'group,value'", line=1, header=header)
    if len(header) < 2:
        raise MalformedCsv("need at least one value column", line=1, header=header)
    width = len(header)
    labels, data = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            if command == "twosample" and len(row) > 1:
                raise MixedArity("vector length differs from the header", line=lineno,
                                 expected=width - 1, got=len(row) - 1)
            raise MalformedCsv("wrong number of fields", line=lineno, expected=width, got=len(row))
        try:
            values = [float(c) for c in row[1:]]
        except ValueError:
            raise MalformedCsv("value is not a decimal number", line=lineno, row=row) from None
        if not all(math.isfinite(v) for v in values):
            raise MalformedCsv("value is not finite", line=lineno, row=row)
        labels.append(row[0].strip())
        data.append(values)
    if not data:
        raise MalformedCsv("no data rows", line=len(rows) + 1)
    arr = np.array(data, dtype=float)
    return labels, (arr[:, 0] if command == "ksample" else arr)


def table1_data():
    labels = [f"g{i // 5 + 1}" for i in range(20)]
    return labels, np.arange(1.0, 21.0)


def table2_data(seed: int):
    x = rng.stream(seed, rng.DATA).exponential(size=40)
    return [f"g{i // 10 + 1}" for i in range(40)], x


def table3_data(seed: int):
    X = rng.stream(seed, rng.DATA).exponential(size=(80, 3))
    return ["s1"] * 40 + ["s2"] * 40, X


# -- execution -----------------------------------------------------------------------

def execute(cfg: RunConfig):
    common = dict(M=cfg.M, seed=cfg.seed, mc_reps=cfg.mc_reps, workers=cfg.workers)
    grid = cfg.u_grid or None
    if cfg.command == "table1":
        labels, values = table1_data()
        return ksample_test(labels, values, True, grid or DEFAULT_GRIDS["table1"], **common)
    if cfg.command == "table2":
        labels, values = table2_data(cfg.seed)
        return ksample_test(labels, values, cfg.scores == "rank", grid or DEFAULT_GRIDS["table2"], **common)
    if cfg.command == "table3":
        labels, X = table3_data(cfg.seed)
        return twosample_test(labels, X, u_grid=grid or DEFAULT_GRIDS["table3"], **common)
    if cfg.input is None:
        raise DomainError(f"{cfg.command} needs --input")
    labels, data = parse_input(cfg.input, cfg.command)
    if cfg.command == "ksample":
        return ksample_test(labels, data, cfg.scores == "rank", grid, **common)
    return twosample_test(labels, data, u_grid=grid, **common)


def _finite(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _clean(d: dict) -> dict:
    return {k: (_clean(v) if isinstance(v, dict) else _finite(v)) for k, v in d.items()}


def _design(report) -> dict:
    return {"labels": list(report.design.labels), "sizes": list(report.design.sizes), "N": report.design.N}


def report_to_json(report, cfg: RunConfig) -> dict:
    base = {"schema_version": SCHEMA_VERSION, "version": __version__, "config": cfg.to_dict(),
            "model": report.kind.value, "design": _design(report)}
    extra = {"M": cfg.M, "mc_reps": cfg.mc_reps, "seed": cfg.seed}
    if isinstance(report, TestReport):
        t = report.tail
        base["report"] = _clean({
            "lambda_obs": report.lambda_obs, "u_obs": report.u_obs,
            "p_lr": t.p_lr, "p_bn": t.p_bn, "p_chisq": t.p_chisq,
            "tail": t.to_dict(),
            "comparison": {"statistic": report.comparison_name.value, "value": report.comparison},
            "mc_lambda": report.mc_lambda.to_dict() if report.mc_lambda else None,
            "mc_comparison": report.mc_comparison.to_dict() if report.mc_comparison else None,
        })
        return base
    cells = []
    for i, u in enumerate(report.u_grid):
        cells.append(_clean({"row": "SP", "u": u, "type": "tail", **report.tails[i].to_dict(),
                             "mc_reps": cfg.mc_reps}))
        if report.mc_lambda is not None:
            cells.append(_clean({"row": "MC Λ", "u": u, "type": "permutation",
                                 **report.mc_lambda[i].to_dict(), **extra}))
            cells.append(_clean({"row": ROW_LABELS[report.comparison_name], "u": u, "type": "permutation",
                                 **report.mc_comparison[i].to_dict(), **extra}))
    base["u_grid"] = list(report.u_grid)
    base["cells"] = cells
    return base


def table_rows(report: GridReport) -> list[tuple[str, list[float]]]:
    """Rows of the grid table, in display order."""
    chi = (f"χ²_{report.d1}", report.p_chisq)
    lr = ("SP LR Λ", report.p_lr)
    bn = ("SP BN Λ", report.p_bn)
    mc = [] if report.mc_lambda is None else [("MC Λ", [o.tail_prob for o in report.mc_lambda])]
    comp = [] if report.mc_comparison is None else [
        (ROW_LABELS[report.comparison_name], [o.tail_prob for o in report.mc_comparison])]
    if report.comparison_name is Statistic.QUADRATIC:
        return mc + [chi, lr, bn] + comp
    return mc + comp + [chi, lr, bn]


def render_text(report, cfg: RunConfig) -> str:
    if isinstance(report, TestReport):
        t = report.tail
        lines = [
            f"model        {report.kind.value}",
            f"groups       {', '.join(f'{lab}={n}' for lab, n in zip(report.design.labels, report.design.sizes))}",
            f"lambda_obs   {report.lambda_obs:.6g}",
            f"u_obs        {report.u_obs:.6g}",
            f"G            {t.G:.6g} (se {t.G_se:.2g}, M={t.M})",
            f"SP LR Λ      {t.p_lr:.4f}",
            f"SP BN Λ      {t.p_bn:.4f}",
            f"{'χ²_' + str(t.d1):<12s} {t.p_chisq:.4f}",
            f"statistic    {report.comparison_name.value} = {report.comparison:.6g}",
        ]
        if report.mc_lambda is not None:
            lines.append(f"MC Λ         {report.mc_lambda.tail_prob:.4f} (R={report.mc_lambda.replicates})")
            lines.append(f"{ROW_LABELS[report.comparison_name]:<12s} {report.mc_comparison.tail_prob:.4f}")
        return "\n".join(lines) + "\n"
    rows = table_rows(report)
    width = max(len(r[0]) for r in rows) + 2
    out = ["û".ljust(width) + "".join(f"{u:>8.2f}" for u in report.u_grid)]
    for label, vals in rows:
        out.append(label.ljust(width) + "".join(f"{v:>8.4f}" for v in vals))
    return "\n".join(out) + "\n"


def render_csv(report, cfg: RunConfig) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if isinstance(report, TestReport):
        t = report.tail
        w.writerow(["lambda_obs", "u_obs", "G", "G_se", "u_star", "p_lr", "p_bn", "p_chisq", "M", "seed",
                    "comparison", "comparison_value", "mc_lambda", "mc_reps"])
        w.writerow([repr(report.lambda_obs), repr(report.u_obs), repr(t.G), repr(t.G_se), repr(t.u_star),
                    repr(t.p_lr), repr(t.p_bn), repr(t.p_chisq), t.M, t.seed, report.comparison_name.value,
                    repr(report.comparison),
                    "" if report.mc_lambda is None else repr(report.mc_lambda.tail_prob), cfg.mc_reps])
        return buf.getvalue()
    w.writerow(["row"] + [repr(u) for u in report.u_grid])
    for label, vals in table_rows(report):
        w.writerow([label] + [repr(float(v)) for v in vals])
    return buf.getvalue()


def render(report, cfg: RunConfig) -> str:
    if cfg.format == "json":
        return json.dumps(report_to_json(report, cfg), indent=2, ensure_ascii=False) + "\n"
    if cfg.format == "csv":
        return render_csv(report, cfg)
    return render_text(report, cfg)


def run(cfg: RunConfig) -> tuple[int, str]:
    """Execute a configuration; returns ``(exit_status, emitted_text)``.

    Nothing is emitted on failure except the error object, so a partial
    table is never written.
    """
    try:
        report = execute(cfg)
        text = render(report, cfg)
    except SaddlepermError as exc:
        return 1, json.dumps(_clean(exc.to_dict()), default=str) + "\n"
    except OSError as exc:
        return 1, json.dumps({"error": "io_error", "message": str(exc), "context": {}}) + "\n"
    return 0, text


def _grid(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid u grid: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saddleperm", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("ksample", "k-sample permutation or rank test from group,value CSV"),
        ("twosample", "two-sample multivariate permutation test from group,v1..vl CSV"),
        ("table1", "4-sample rank test with ranks 1..20, n_i = 5"),
        ("table2", "4-sample permutation test on 40 fresh exponential values"),
        ("table3", "3-variate two-sample test on 40 + 40 fresh exponential vectors"),
    ]:
        p = sub.add_parser(name, help=help_)
        table = name.startswith("table")
        p.add_argument("--input", help="CSV data file")
        p.add_argument("--scores", choices=["rank", "raw"], default="raw" if name == "table2" else "rank")
        p.add_argument("--u-grid", type=_grid, default=(), help="comma-separated increasing u values")
        p.add_argument("--sphere-samples", "--M", dest="M", type=int, default=1000)
        p.add_argument("--mc-reps", type=int, default=100_000 if table else 0)
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--format", choices=["text", "csv", "json"], default="text")
        p.add_argument("--output", help="write the report here instead of stdout")
        p.add_argument("--workers", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig(command=args.command, input=args.input, scores=args.scores, u_grid=args.u_grid,
                        M=args.M, mc_reps=args.mc_reps, seed=args.seed, format=args.format,
                        output=args.output, workers=args.workers)
    except SaddlepermError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), default=str) + "\n")
        return 1
    status, text = run(cfg)
    if status != 0:
        sys.stderr.write(text)
        return status
    if cfg.output:
        Path(cfg.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
