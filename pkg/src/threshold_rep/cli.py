"""Command-line front end.

Exit codes: 0 success, 1 validation or bound failure, 2 parse or input
error, 3 dimension cap exceeded.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .bounds import (
    ErrorParams,
    PlanningError,
    binomial_tail,
    hedging_bound,
    ik_bound,
    monte_carlo_tail,
    plan_repetition,
    plan_with_shrinking_gap,
    read_schedule,
)
from .errors import (
    BoundVacuousError,
    InstanceTooLarge,
    ProtocolFormatError,
    SolverError,
    ValidationError,
)
from .protocol import (
    BUILTIN_PROTOCOLS,
    ThresholdTask,
    compile_threshold,
    load_protocol,
    save_protocol,
    validate_protocol,
)
from .sdp import SolverOptions
from .strategy import see_saw, solve_value

SCHEMA = "threshold-rep/1"

# solver values below k/n by less than this are treated as ties, for which no bound applies
BOUND_MARGIN = 1e-7

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PARSE = 2
EXIT_CAP = 3

log = logging.getLogger(__name__)


class CommandFailed(Exception):
    """Carries a partial result and an exit code back to :func:`main`."""

    def __init__(self, message: str, code: int, result: dict | None = None):
        super().__init__(message)
        self.code = code
        self.result = result


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _round_float(x: float):
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(f"{x:.9g}")


def normalize(obj):
    """Round floats to 9 significant digits; non-finite floats become strings."""
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return _round_float(obj)
    if isinstance(obj, dict):
        return {str(k): normalize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [normalize(v) for v in obj]
    if hasattr(obj, "item"):
        return normalize(obj.item())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def flatten(obj, prefix: str = "") -> list[tuple[str, object]]:
    if isinstance(obj, dict):
        rows = []
        for k, v in obj.items():
            rows.extend(flatten(v, f"{prefix}.{k}" if prefix else str(k)))
        return rows
    if isinstance(obj, list):
        rows = []
        for i, v in enumerate(obj):
            rows.extend(flatten(v, f"{prefix}.{i}" if prefix else str(i)))
        return rows
    return [(prefix, obj)]


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "null"
    return str(v)


def render(command: str, result: dict, fmt: str, ok: bool = True) -> str:
    data = normalize(result)
    if fmt == "json":
        doc = {"schema": SCHEMA, "command": command, "ok": ok, "result": data}
        return json.dumps(doc, indent=2, sort_keys=False) + "\n"
    rows = flatten(data)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in rows:
            w.writerow([k, _cell(v)])
        return buf.getvalue()
    width = max((len(k) for k, _ in rows), default=0)
    return "".join(f"{k.ljust(width)}  {_cell(v)}\n" for k, v in rows)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _solver_options(args) -> SolverOptions:
    return SolverOptions(gap_tol=args.gap_tol, max_iter=args.max_iter)


def _load(path: str):
    if not Path(path).is_file():
        raise CommandFailed(f"{path}: no such file", EXIT_PARSE)
    p = load_protocol(path)
    report = validate_protocol(p)
    if not report.passed:
        raise CommandFailed(
            f"{path}: protocol fails validation", EXIT_FAIL, {"validation": report.as_dict()}
        )
    return p


def _value_report(task: ThresholdTask, args) -> dict:
    _, q = compile_threshold(task)
    res = solve_value(q, _solver_options(args))
    sol = res.solution
    out = {
        "n": task.n,
        "k": task.k,
        "optimal_value": res.value,
        "dual_value": sol.dual_value,
        "duality_gap": sol.gap,
        "primal_residual": sol.primal_residual,
        "dual_residual": sol.dual_residual,
        "iterations": sol.iterations,
        "status": sol.status,
    }
    if args.restarts > 0:
        lb, _ = see_saw(q, restarts=args.restarts, seed=args.seed)
        out["see_saw_lower_bound"] = min(1.0, max(0.0, lb))
    return out


def cmd_validate(args) -> dict:
    if not Path(args.path).is_file():
        raise CommandFailed(f"{args.path}: no such file", EXIT_PARSE)
    report = validate_protocol(load_protocol(args.path))
    result = report.as_dict()
    if not report.passed:
        names = ", ".join(c.name for c in report.failures())
        raise CommandFailed(f"validation failed: {names}", EXIT_FAIL, result)
    return result


def cmd_value(args) -> dict:
    p = _load(args.path)
    return _value_report(ThresholdTask(p, 1, 1), args)


def cmd_threshold_value(args) -> dict:
    p = _load(args.path)
    task = ThresholdTask(p, args.n, args.k)
    out = _value_report(task, args)
    single = solve_value(compile_threshold(ThresholdTask(p, 1, 1))[1], _solver_options(args)).value
    out["single_value"] = single
    out["independent_baseline"] = binomial_tail(args.n, args.k, single)
    if args.k >= 1 and args.k / args.n > single + BOUND_MARGIN:
        out["hedging_bound"] = hedging_bound(args.n, single, args.k)
    return out


def cmd_bound(args) -> dict:
    if args.gamma is not None or args.delta is not None:
        if args.gamma is None or args.delta is None or args.k is not None or args.p is not None:
            raise CommandFailed("give either --gamma and --delta, or --k and --p", EXIT_PARSE)
        kl, hoeff = ik_bound(args.n, args.gamma, args.delta)
        k = math.ceil(args.gamma * args.n - 1e-12)
        return {
            "n": args.n,
            "gamma": args.gamma,
            "delta": args.delta,
            "kl_form": kl,
            "hoeffding_form": hoeff,
            "binomial_tail": binomial_tail(args.n, min(k, args.n), args.delta),
        }
    if args.k is None or args.p is None:
        raise CommandFailed("give either --gamma and --delta, or --k and --p", EXIT_PARSE)
    out = {"n": args.n, "k": args.k, "p": args.p, "binomial_tail": binomial_tail(args.n, args.k, args.p)}
    try:
        out["hedging_bound"] = hedging_bound(args.n, args.p, args.k)
    except BoundVacuousError as exc:
        raise CommandFailed(str(exc), EXIT_FAIL, out) from exc
    return out


def cmd_plan(args) -> dict:
    try:
        if args.schedule is not None:
            if args.a is not None or args.b is not None:
                raise CommandFailed("--schedule excludes --a/--b", EXIT_PARSE)
            try:
                rows = read_schedule(args.schedule)
            except (OSError, ValueError) as exc:
                raise CommandFailed(str(exc), EXIT_PARSE) from exc
            plan = plan_with_shrinking_gap(rows, args.eps, args.tight)
        else:
            if args.a is None or args.b is None:
                raise CommandFailed("plan needs --a and --b, or --schedule", EXIT_PARSE)
            plan = plan_repetition(ErrorParams(args.a, args.b, args.eps), tight=args.tight)
    except PlanningError as exc:
        raise CommandFailed(str(exc), EXIT_FAIL) from exc
    return plan.as_dict()


def cmd_demo(args) -> dict:
    p = BUILTIN_PROTOCOLS[args.name]()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{args.name.replace('-', '_')}.json"
    save_protocol(p, path)
    opts = _solver_options(args)

    def value(n, k):
        return solve_value(compile_threshold(ThresholdTask(p, n, k))[1], opts)

    single = value(1, 1)
    pair_any = value(2, 1)
    pair_all = value(2, 2)
    v = single.value
    out = {
        "protocol_file": path.name,
        "single_value": v,
        "value_2_of_2": pair_all.value,
        "value_1_of_2": pair_any.value,
        "independent_2_of_2": v * v,
        "independent_1_of_2": 1.0 - (1.0 - v) ** 2,
        "max_duality_gap": max(single.gap, pair_any.gap, pair_all.gap),
    }
    if args.restarts > 0:
        lb, _ = see_saw(compile_threshold(ThresholdTask(p, 1, 1))[1], restarts=args.restarts, seed=args.seed)
        out["see_saw_single"] = min(1.0, max(0.0, lb))
    notes = {}
    for n, k in ((2, 1), (2, 2)):
        key = f"hedging_bound_{k}_of_{n}"
        if k / n > v + BOUND_MARGIN:
            out[key] = hedging_bound(n, v, k)
        else:
            notes[key] = f"k/n = {k / n:g} does not exceed p = {v:.6f}; no bound applies"
    if notes:
        out["notes"] = notes
    return out


def cmd_montecarlo(args) -> dict:
    est, half = monte_carlo_tail(args.n, args.k, args.p, args.trials, args.seed)
    out = {
        "n": args.n,
        "k": args.k,
        "p": args.p,
        "trials": args.trials,
        "seed": args.seed,
        "estimate": est,
        "ci95": half,
        "exact": binomial_tail(args.n, args.k, args.p),
    }
    gamma = args.k / args.n
    if gamma >= args.p:
        kl, hoeff = ik_bound(args.n, gamma, args.p)
        out["kl_form"] = kl
        out["hoeffding_form"] = hoeff
    return out


COMMANDS = {
    "validate": cmd_validate,
    "value": cmd_value,
    "threshold-value": cmd_threshold_value,
    "bound": cmd_bound,
    "plan": cmd_plan,
    "demo": cmd_demo,
    "montecarlo": cmd_montecarlo,
}


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _nonneg_int(s: str) -> int:
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("table", "json", "csv"), default="table")
    common.add_argument("-v", "--verbose", action="store_true")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--gap-tol", type=float, default=1e-5)
    solver.add_argument("--max-iter", type=_positive_int, default=100)
    solver.add_argument("--seed", type=int, default=0, help="see-saw seed")
    solver.add_argument("--restarts", type=_nonneg_int, default=10, help="see-saw restarts (0 disables)")

    ap = argparse.ArgumentParser(prog="threshold-rep", description="Threshold parallel repetition toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="check a protocol file")
    s.add_argument("path")

    s = sub.add_parser("value", parents=[common, solver], help="single-instance optimal value")
    s.add_argument("path")

    s = sub.add_parser("threshold-value", parents=[common, solver], help="optimal value of winning k of n")
    s.add_argument("path")
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--k", type=_nonneg_int, required=True)

    s = sub.add_parser("bound", parents=[common], help="concentration bounds")
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--gamma", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--k", type=_nonneg_int)
    s.add_argument("--p", type=float)

    s = sub.add_parser("plan", parents=[common], help="choose n and k for target errors")
    s.add_argument("--a", type=float)
    s.add_argument("--b", type=float)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--schedule", help="CSV file with header n,a,b")
    s.add_argument("--tight", action="store_true")

    s = sub.add_parser("demo", parents=[common, solver], help="write a built-in protocol and evaluate it")
    s.add_argument("name", choices=sorted(BUILTIN_PROTOCOLS))
    s.add_argument("--out-dir", default=".")

    s = sub.add_parser("montecarlo", parents=[common], help="empirical tail of i.i.d. trials")
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--k", type=_nonneg_int, required=True)
    s.add_argument("--p", type=float, required=True)
    s.add_argument("--trials", type=_positive_int, default=100000)
    s.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    fmt = args.format
    try:
        result = COMMANDS[args.command](args)
    except CommandFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.result is not None:
            sys.stdout.write(render(args.command, exc.result, fmt, ok=False))
        return exc.code
    except InstanceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.report is not None:
            sys.stdout.write(render(args.command, exc.report.as_dict(), fmt, ok=False))
        return EXIT_FAIL
    except (ProtocolFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except BoundVacuousError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except ValueError as exc:
        # domain errors on numeric flags
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    sys.stdout.write(render(args.command, result, fmt))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
