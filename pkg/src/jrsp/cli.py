"""Command-line front end.

Exit codes: 0 optimal (or all checks passed), 1 feasible without proof (or
a failed check), 2 infeasible, 3 time limit without a solution, 64 usage or
input error. ``JRSP_LOG`` (``quiet``, ``info``, ``trace``) sets the
verbosity of diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field

from .bcp import FEASIBLE, INFEASIBLE, OPTIMAL, TIME_LIMIT, BcpOptions, Solution, solve_bcp
from .model import FAMILIES, InfeasibleInstance, ParseError, ValidationError, generate_instance, load_instance
from .pricing import RouteVariant
from .sop import optimal_route_cost, simulate

log = logging.getLogger("jrsp")

EXIT_CODES = {OPTIMAL: 0, FEASIBLE: 1, INFEASIBLE: 2, TIME_LIMIT: 3}
EXIT_USAGE = 64
FORMATS = {"json": "canonical_json", "maritime": "maritime_txt", "uk": "uk_prp_txt"}
LOG_LEVELS = {"quiet": logging.ERROR, "info": logging.INFO, "trace": logging.DEBUG}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


@dataclass
class RunReport:
    """Everything about one solve that is worth archiving."""

    instance: str
    options: dict
    solution: dict
    timings: dict = field(default_factory=dict)
    revalidated: bool = False

    def to_dict(self, with_timing: bool = True) -> dict:
        out = asdict(self)
        if not with_timing:
            out["timings"] = {}
            out["solution"] = {**out["solution"], "stats": {k: v for k, v in out["solution"]["stats"].items()
                                                            if k != "seconds"}}
        return out


def revalidate(inst, solution: Solution, tol: float = 1e-6) -> bool:
    """Drive every reported route at its reported speeds and compare costs."""
    for p in solution.routes:
        sim = simulate(inst, p.route, p.speeds)
        if sim is None or abs(sim[0] - p.cost) > tol * max(1.0, abs(p.cost)):
            return False
    return True


def make_report(inst, options: BcpOptions, solution: Solution) -> RunReport:
    opts = {**options.__dict__, "variant": options.variant.value}
    if math.isinf(opts["time_limit"]):
        opts["time_limit"] = None
    return RunReport(inst.name, opts, solution.to_dict(), dict(solution.timings), revalidate(inst, solution))


def solution_csv(solution: Solution) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["row", "seq", "speeds", "starts", "cost", "status", "blb", "bub", "nodes", "columns", "cuts",
                "seconds"])
    for p in solution.routes:
        w.writerow(["route", " ".join(map(str, p.route)), " ".join(f"{v:.10g}" for v in p.speeds),
                    " ".join(f"{t:.10g}" for t in p.starts), f"{p.cost:.10g}", "", "", "", "", "", "", ""])
    w.writerow(["summary", "", "", "", "", solution.status, _num(solution.blb), _num(solution.bub),
                solution.nodes, solution.columns, solution.cuts, f"{solution.seconds:.3f}"])
    return buf.getvalue()


def _num(v: float) -> str:
    return f"{v:.10g}" if math.isfinite(v) else ""


def _load(args):
    try:
        return load_instance(args.instance, FORMATS[args.format])
    except (ParseError, ValidationError) as exc:
        raise UsageError(f"cannot read {args.instance}: {exc}") from exc
    except OSError as exc:
        raise UsageError(str(exc)) from exc


def cmd_solve(args) -> int:
    inst = _load(args)
    options = BcpOptions(variant=RouteVariant(args.variant), time_limit=args.time_limit,
                         cuts_on=args.cuts == "on", node_selection=args.node_selection,
                         max_cols_per_iter=args.max_columns)
    solution = solve_bcp(inst, options)
    report = make_report(inst, options, solution)
    log.info("status %s, bounds [%s, %s], %d nodes, revalidated=%s", solution.status, solution.blb,
             solution.bub, solution.nodes, report.revalidated)
    text = json.dumps(solution.to_dict(), indent=2) + "\n" if args.emit == "json" else solution_csv(solution)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_CODES[solution.status]


def cmd_sop(args) -> int:
    inst = _load(args)
    try:
        route = tuple(int(tok) for tok in args.route.replace(" ", "").split(","))
        opt = optimal_route_cost(inst, route)
    except ValueError as exc:
        raise UsageError(f"bad route {args.route!r}: {exc}") from exc
    if opt is None:
        print(json.dumps({"route": list(route), "feasible": False}))
        return EXIT_CODES[INFEASIBLE]
    p = opt.profile
    print(json.dumps({"route": list(route), "feasible": True, "cost": opt.cost, "active": list(opt.active),
                      "speeds": list(p.speeds), "starts": list(p.starts), "arrivals": list(p.arrivals)},
                     indent=2))
    return 0


def cmd_validate(args) -> int:
    from .oracles import run_validation

    results = run_validation(args.n, args.trials, args.seed)
    failed = [r for r in results if not r.passed]
    for r in results:
        if not r.passed or args.verbose:
            print(f"{'PASS' if r.passed else 'FAIL'} {r.suite} trial {r.trial}: {r.detail}")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 0 if not failed else 1


def cmd_gen(args) -> int:
    try:
        inst = generate_instance(args.n, K=args.K, Q=args.Q, family=args.family, window_width=args.window_width,
                                 seed=args.seed)
    except (ValueError, InfeasibleInstance) as exc:
        raise UsageError(str(exc)) from exc
    text = inst.to_json() + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jrsp", description="Joint vehicle routing and speed optimization.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def instance_args(p):
        p.add_argument("--instance", required=True, help="instance file")
        p.add_argument("--format", choices=sorted(FORMATS), default="json")

    p = sub.add_parser("solve", help="solve an instance to optimality")
    instance_args(p)
    p.add_argument("--variant", choices=[v.value for v in RouteVariant], default="elementary")
    p.add_argument("--time-limit", type=float, default=math.inf, metavar="SECS")
    p.add_argument("--cuts", choices=["on", "off"], default="on")
    p.add_argument("--node-selection", choices=["best_bound", "dfs"], default="best_bound")
    p.add_argument("--max-columns", type=int, default=50, help="columns added per pricing round")
    p.add_argument("--out", help="write the result here instead of stdout")
    p.add_argument("--emit", choices=["json", "csv"], default="json")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sop", help="optimal speeds and cost of a fixed route")
    instance_args(p)
    p.add_argument("--route", required=True, help='comma separated, e.g. "0,3,1,0"')
    p.set_defaults(func=cmd_sop)

    p = sub.add_parser("validate", help="cross-check against brute-force references")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen", help="generate a random instance (canonical JSON)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--Q", type=float, default=100.0)
    p.add_argument("--family", choices=FAMILIES, default="short")
    p.add_argument("--window-width", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)
    return parser


def _configure_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("JRSP_LOG", "quiet").lower(), logging.ERROR)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def run_cli(argv=None) -> int:
    """Parse ``argv`` and run the chosen subcommand; returns the exit code."""
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"jrsp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
