"""Command-line driver: single solves, benchmark manifests and self-checks.

Results are line-delimited JSON, one :class:`RunRecord` per line.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional


from . import data, tuning
from .errors import SqrtRegError
from .model import (
    CriterionKind,
    GroupStructure,
    KKTReport,
    Regularizer,
    SolverConfig,
    Status,
    normalize_columns,
    nnz_stats,
)

log = logging.getLogger("sqrtreg")

EXIT_OK, EXIT_ERROR, EXIT_CAP = 0, 1, 2

SOLVERS = ("ppdna", "padmm", "dadmm")
PENALTIES = ("sgl", "fused")
LAMBDA_RULES = ("bel", "sts", "bls", "bun", "stg", "blg", "jia", "cv")


def _solver(name: str):
    from .admm import dadmm_solve, padmm_solve
    from .ppdna import ppa_solve

    return {"ppdna": ppa_solve, "padmm": padmm_solve, "dadmm": dadmm_solve}[name]


@dataclass
class RunRecord:
    problem: str
    solver: str
    penalty: str
    lam: float
    w1: float
    w2: float
    lambda_rule: str
    seed: int
    nnz: int
    nnz2: int
    outer: int
    inner: int
    wall_seconds: float
    status: str
    error_kind: str
    error_value: float
    objective: float
    message: str = ""

    def to_json(self) -> str:
        d = asdict(self)
        # json has no inf/nan literal that every reader accepts
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = repr(v)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        d = json.loads(line)
        for f in fields(cls):
            if f.type == "float" and isinstance(d.get(f.name), str):
                d[f.name] = float(d[f.name])
        return cls(**d)

    @property
    def marker(self) -> str:
        if not self.error_kind:
            return ""
        return KKTReport(CriterionKind(self.error_kind), self.error_value).marker


def format_time(seconds: float) -> str:
    """``mm:ss``, or ``ss`` under a minute; anything below half a second is
    ``00``."""
    if seconds < 0.5:
        return "00"
    s = int(round(seconds))
    m, s = divmod(s, 60)
    return f"{m:02d}:{s:02d}" if m else f"{s:02d}"


def render_row(rec: RunRecord) -> str:
    it = f"{rec.outer}|{rec.inner}" if rec.solver == "ppdna" else f"{rec.outer}"
    err = "" if rec.status == "Error" else f"{rec.marker}{rec.error_value:.1e}"
    sp_ = f"{rec.nnz}|{rec.nnz2}"
    return (f"{rec.problem:<18} {rec.solver:<6} {rec.lam:>8.3f} {sp_:>9} {it:>9} "
            f"{format_time(rec.wall_seconds):>6} {err:>9} {rec.status}")


def render_table(records) -> str:
    head = (f"{'problem':<18} {'solver':<6} {'lambda':>8} {'nnz':>9} {'iter':>9} "
            f"{'time':>6} {'error':>9} status")
    return "\n".join([head] + [render_row(r) for r in records])


# --------------------------------------------------------------------------


@dataclass
class Problem:
    name: str
    ds: object
    groups: Optional[GroupStructure]


def load_problem(problem: str, N: Optional[int], g: Optional[int], seed: int,
                 groups: Optional[int], normalize: bool = True) -> Problem:
    """``ex1|ex2|ex3`` (with ``N`` and ``g``, or ``ex1:N:g``) or a path to a
    sparse text or CSV file."""
    head = problem.split(":")
    if head[0] in ("ex1", "ex2", "ex3"):
        if len(head) == 3:
            N, g = int(head[1]), int(head[2])
        if N is None or g is None:
            raise ValueError("synthetic problems need N and g")
        ds, G, _ = data.SyntheticSpec(data.Example(head[0]), N, g, seed).generate()
        name = f"{head[0]}({N},{3 * g})"
    else:
        path = Path(problem)
        ds = data.load_csv(path) if path.suffix.lower() == ".csv" else data.load_libsvm(path)
        G = data.random_group_assignment(ds.n, groups or min(300, ds.n), seed)
        name = path.stem
    if normalize:
        ds = normalize_columns(ds)
    return Problem(name, ds, G)


def make_regularizer(penalty: str, w1: float, groups: Optional[GroupStructure]) -> Regularizer:
    if penalty == "sgl":
        return Regularizer.sparse_group(groups, w1, 1.0 - w1)
    if penalty == "fused":
        return Regularizer.fused(w1, 1.0 - w1)
    raise ValueError(f"unknown penalty {penalty!r}")


def resolve_lambda(rule: str, prob: Problem, reg: Regularizer, a: float, seed: int,
                   mc_samples: int, penalty: str, solver: str, cfg: SolverConfig) -> float:
    ds = prob.ds
    try:
        return float(rule)
    except ValueError:
        pass
    rule = rule.lower()
    if rule in ("bun", "stg", "blg") and reg.is_fused:
        raise ValueError(f"rule {rule!r} needs a group penalty")
    if rule == "bel":
        return tuning.lambda_bel(ds.n, a)
    if rule == "sts":
        return tuning.lambda_st(ds.n, ds.N, a)
    if rule == "stg":
        return tuning.lambda_st(prob.groups.g, ds.N, a)
    if rule == "bls":
        return tuning.lambda_blanchet(ds, None, a, mc_samples, seed)
    if rule == "blg":
        return tuning.lambda_blanchet(ds, reg, a, mc_samples, seed)
    if rule == "bun":
        return tuning.lambda_bun(ds, prob.groups, a)
    if rule == "jia":
        return tuning.lambda_jia(ds.n, ds.N, a)
    if rule == "cv":
        grid = [(l, reg.w1) for l in tuning.cv2_grid()]
        res = tuning.cross_validate(ds, lambda w1: make_regularizer(penalty, w1, prob.groups),
                                    grid, seed=seed, solver=_solver(solver), cfg=cfg)
        return res.best[0]
    raise ValueError(f"unknown lambda rule {rule!r}")


def run_cell(cell: dict) -> RunRecord:
    """Run one ``{problem, solver, penalty, w1, lambda_rule, seed}`` cell."""
    problem = cell["problem"]
    solver = cell.get("solver", "ppdna")
    penalty = cell.get("penalty", "sgl")
    w1 = float(cell.get("w1", 0.0))
    rule = str(cell.get("lambda_rule", "bun"))
    seed = int(cell.get("seed", 0))
    try:
        if solver not in SOLVERS:
            raise ValueError(f"unknown solver {solver!r}")
        prob = load_problem(problem, cell.get("N"), cell.get("g"), seed, cell.get("groups"),
                            cell.get("normalize", True))
        reg = make_regularizer(penalty, w1, prob.groups)
        cfg = SolverConfig(lam=1.0, tol=float(cell.get("tol", 1e-6)),
                           max_time_seconds=float(cell.get("max_time", 1800.0)))
        lam = resolve_lambda(rule, prob, reg, float(cell.get("a", 0.05)), seed,
                             int(cell.get("mc_samples", tuning.MC_DEFAULT)), penalty, solver, cfg)
        res = _solver(solver)(prob.ds, reg, cfg.with_(lam=lam))
        nnz, nnz2 = nnz_stats(res.beta, reg)
        return RunRecord(prob.name, solver, penalty, lam, w1, 1.0 - w1, rule, seed, nnz, nnz2,
                         res.outer_iters, res.inner_iters, res.wall_seconds, res.status.value,
                         res.criterion.kind.value, res.criterion.value, res.objective_primal)
    except (SqrtRegError, ValueError, OSError, KeyError) as exc:
        return RunRecord(str(problem), solver, penalty, math.nan, w1, 1.0 - w1, rule, seed,
                         0, 0, 0, 0, 0.0, "Error", "", math.nan, math.nan, str(exc))


def _exit_code(records) -> int:
    if any(r.status == "Error" for r in records):
        return EXIT_ERROR
    if any(r.status in (Status.MAX_ITERATIONS.value, Status.TIME_LIMIT.value) for r in records):
        return EXIT_CAP
    return EXIT_OK


def _append(path: Optional[str], records) -> None:
    if not path:
        return
    with open(path, "a") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def cmd_solve(args) -> int:
    problem = args.input if args.input else args.synthetic
    cell = {"problem": problem, "N": args.N, "g": args.g, "solver": args.solver,
            "penalty": args.penalty, "w1": args.w1, "lambda_rule": args.lam,
            "seed": args.seed, "tol": args.tol, "max_time": args.max_time,
            "groups": args.groups, "normalize": args.normalize, "a": args.a,
            "mc_samples": args.mc_samples}
    rec = run_cell(cell)
    if rec.status == "Error":
        print(f"error: {rec.message}", file=sys.stderr)
        return EXIT_ERROR
    _append(args.out, [rec])
    print(render_table([rec]))
    return _exit_code([rec])


def _workers() -> int:
    env = os.environ.get("SQRTREG_THREADS")
    if env:
        return max(1, int(env))
    return 1


def cmd_bench(args) -> int:
    cells = []
    with open(args.manifest) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                cells.append(json.loads(line))
            except json.JSONDecodeError as exc:
                print(f"error: manifest line {lineno}: {exc}", file=sys.stderr)
                return EXIT_ERROR
    workers = min(_workers(), max(1, len(cells)))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            records = list(ex.map(run_cell, cells))
    else:
        records = [run_cell(c) for c in cells]
    _append(args.out, records)
    print(render_table(records))
    for r in records:
        if r.status == "Error":
            print(f"cell {r.problem}/{r.solver}: {r.message}", file=sys.stderr)
    return _exit_code(records)


def cmd_verify(args) -> int:
    from .verify import FAMILIES, run_family

    families = [args.family] if args.family else list(FAMILIES)
    ok = True
    for fam in families:
        for res in run_family(fam, args.trials, args.seed):
            print(res.line())
            ok &= res.passed
    return EXIT_OK if ok else EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sqrtreg",
                                description="Square-root regularized regression solvers")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="run one solve")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="sparse text (1-based) or .csv file")
    src.add_argument("--synthetic", choices=("ex1", "ex2", "ex3"))
    s.add_argument("--N", type=int)
    s.add_argument("--g", type=int)
    s.add_argument("--groups", type=int, help="random groups for file input (default 300)")
    s.add_argument("--penalty", choices=PENALTIES, default="sgl")
    s.add_argument("--w1", type=float, default=0.0)
    s.add_argument("--lambda", dest="lam", default="bun",
                   help="a number or one of " + ", ".join(LAMBDA_RULES))
    s.add_argument("--solver", choices=SOLVERS, default="ppdna")
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--max-time", type=float, default=1800.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--a", type=float, default=0.05)
    s.add_argument("--mc-samples", type=int, default=tuning.MC_DEFAULT)
    s.add_argument("--out", help="append the record to this JSON-lines file")
    s.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True)
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run a JSON-lines manifest")
    b.add_argument("manifest")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("verify", help="run the numerical self-checks")
    v.add_argument("--family", choices=("dro", "prox", "jacobian", "gradient"))
    v.add_argument("--trials", type=int, default=100)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; 2 is reserved for capped runs
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
