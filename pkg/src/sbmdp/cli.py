"""Command-line harness: generate models, solve them, compare and benchmark frontiers.

Exit codes: 0 success, 1 usage or I/O error, 2 search stopped by its budget,
3 invalid model or result file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import FrontierSet, IntervalModel, ModelError, ValueTriple, po_filter, validate
from .generators import (AntgConfig, GridConfig, QueueConfig, config_dict, gen_antg, gen_grid,
                         gen_queue)
from .metrics import COVERAGE_COLUMNS, coverage, coverage_csv
from .pareto import SearchBudget, pareto_exact, pareto_heuristic
from .robust import (ConvergenceError, Evaluator, SolveConfig, optimal_avg, optimal_lower,
                     optimal_upper)
from .spea2 import EvoConfig, spea2_run

log = logging.getLogger("sbmdp")

EXIT_OK, EXIT_USAGE, EXIT_TRUNCATED, EXIT_INVALID = 0, 1, 2, 3
ALGORITHMS = ("exact", "heuristic", "spea2", "lower", "upper", "avg")
SUMMARY_COLUMNS = ("instance_id", "algorithm", "n_states", "n_actions", "policy_count",
                   "value_count", "expanded_count", "eval_count", "wall_seconds",
                   "seconds_per_policy", "truncated")
BENCH_COLUMNS = ("family", "instance_id", "seed", "n_states", "n_actions", "wall_seconds",
                 "policy_count", "seconds_per_policy", "eval_count", "truncated")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


# results ---------------------------------------------------------------------

@dataclass
class ExperimentResult:
    instance_id: str
    algorithm: str
    policy_count: int
    eval_count: int
    wall_seconds: float
    policies: list = field(default_factory=list)
    values: list = field(default_factory=list)  # ValueTriple per policy
    truncated: bool = False
    config: dict = field(default_factory=dict)

    @classmethod
    def from_frontier(cls, instance_id, algorithm, frontier: FrontierSet, wall_seconds, config):
        entries = frontier.sorted_entries()
        return cls(instance_id, algorithm, len(entries), int(frontier.eval_count),
                   float(wall_seconds), [p for p, _ in entries], [v for _, v in entries],
                   bool(frontier.truncated), config)

    def frontier(self) -> FrontierSet:
        return po_filter(zip(self.policies, self.values))

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "algorithm": self.algorithm,
            "policy_count": self.policy_count,
            "eval_count": self.eval_count,
            "wall_seconds": self.wall_seconds,
            "truncated": self.truncated,
            "config": self.config,
            "frontier": [{"policy": [int(a) for a in p],
                          "lower": v.lower.tolist(), "avg": v.avg.tolist(),
                          "upper": v.upper.tolist()}
                         for p, v in zip(self.policies, self.values)],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentResult":
        policies, values = [], []
        for item in data["frontier"]:
            policies.append(np.array(item["policy"], dtype=np.int64))
            values.append(ValueTriple(np.array(item["lower"], dtype=float),
                                      np.array(item["avg"], dtype=float),
                                      np.array(item["upper"], dtype=float)))
        return cls(data["instance_id"], data["algorithm"], int(data["policy_count"]),
                   int(data["eval_count"]), float(data["wall_seconds"]), policies, values,
                   bool(data.get("truncated", False)), dict(data.get("config", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "ExperimentResult":
        """Read a result file and check that its frontier is mutually non-dominated."""
        try:
            result = cls.from_dict(json.loads(Path(path).read_text()))
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(f"{path}: malformed result file ({exc})", EXIT_INVALID) from exc
        if len(result.policies) != result.policy_count:
            raise CliError(f"{path}: policy_count does not match the frontier", EXIT_INVALID)
        front = FrontierSet()
        front.update(zip(result.policies, result.values))
        if len(front) != len(result.policies) or not front.is_mutually_nondominated():
            raise CliError(f"{path}: frontier contains dominated policies", EXIT_INVALID)
        return result

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExperimentResult):
            return NotImplemented
        return (self.to_dict() == other.to_dict())


def instance_id_of(model: IntervalModel) -> str:
    return "sha256:" + hashlib.sha256(model.dumps().encode()).hexdigest()[:16]


def summary_row(result: ExperimentResult, model: IntervalModel) -> dict:
    count = result.policy_count
    expanded = sum(model.multiplicity(p) for p in result.policies)
    unique = len(result.frontier().unique_values()) if count else 0
    return {
        "instance_id": result.instance_id,
        "algorithm": result.algorithm,
        "n_states": model.n_states,
        "n_actions": model.n_actions,
        "policy_count": count,
        "value_count": unique,
        "expanded_count": expanded,
        "eval_count": result.eval_count,
        "wall_seconds": f"{result.wall_seconds:.6f}",
        "seconds_per_policy": f"{result.wall_seconds / count:.6f}" if count else "",
        "truncated": int(result.truncated),
    }


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise CliError(f"cannot write {out}: {exc}") from exc
    else:
        sys.stdout.write(text)


# model generation ---------------------------------------------------------------

def build_model(args) -> tuple[IntervalModel, dict]:
    if args.family == "queue":
        cfg = QueueConfig(m=args.m, c=args.c, p=args.p, q=args.q, nu=args.nu,
                          omega1=args.omega1, omega2=args.omega2, omega3=args.omega3,
                          noise_sd=args.noise_sd, rng_seed=args.seed, gamma=args.gamma,
                          shared_noise=args.shared_noise)
        return gen_queue(cfg), config_dict(cfg)
    if args.family == "grid":
        cfg = GridConfig(n_rows=args.rows, m_cols=args.cols, noise_sd=args.noise_sd,
                         rng_seed=args.seed, gamma=args.gamma)
        return gen_grid(cfg), config_dict(cfg)
    cfg = AntgConfig(n=args.n, gamma=args.gamma, diagonal=args.diagonal)
    return gen_antg(cfg), config_dict(cfg)


def cmd_generate(args) -> int:
    try:
        model, _ = build_model(args)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    _emit(model.dumps() + "\n", args.out)
    if args.out:
        print(f"{args.out}: {model.n_states} states, {model.n_actions} actions")
    return EXIT_OK


# solving -------------------------------------------------------------------------

def _load_model(path) -> IntervalModel:
    try:
        model = IntervalModel.load(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    except (ModelError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: invalid model: {exc}", EXIT_INVALID) from exc
    problems = validate(model)
    if problems:
        raise CliError(f"{path}: invalid model:\n  " + "\n  ".join(problems), EXIT_INVALID)
    return model


def _solve_cfg(args) -> SolveConfig:
    return SolveConfig(epsilon=args.epsilon, max_iters=args.max_iters,
                       linear_solver=args.solver)


def run_algorithm(model: IntervalModel, algorithm: str, args) -> tuple[FrontierSet, float]:
    """Run one solver and return its frontier and wall-clock seconds."""
    ev = Evaluator(model, _solve_cfg(args))
    budget = SearchBudget(max_policies=args.max_policies, wall_clock_limit=args.time_limit)
    collapse = not args.keep_duplicates
    t0 = time.perf_counter()
    if algorithm == "exact":
        front = pareto_exact(model, budget=budget, collapse=collapse, evaluator=ev)
    elif algorithm == "heuristic":
        front = pareto_heuristic(model, budget=budget, collapse=collapse, evaluator=ev,
                                 stop_on_stall=args.stop_on_stall)
    elif algorithm == "spea2":
        evo = EvoConfig(population_size=args.spea2_pop, archive_size=args.spea2_archive,
                        time_limit_seconds=args.spea2_time, rng_seed=args.seed,
                        max_generations=args.spea2_generations,
                        warm_start=args.spea2_warm_start)
        front = spea2_run(model, evo, evaluator=ev)
    else:
        solver = {"lower": optimal_lower, "upper": optimal_upper, "avg": optimal_avg}[algorithm]
        pi, _ = solver(model, evaluator=ev)
        front = FrontierSet()
        front.insert(pi, ev.evaluate(pi))
        front.eval_count = ev.n_evals
    return front, time.perf_counter() - t0


def cmd_solve(args) -> int:
    model = _load_model(args.model)
    if args.gamma is not None and args.gamma != model.gamma:
        model = IntervalModel.from_dict({**model.to_dict(), "gamma": args.gamma})
    try:
        front, wall = run_algorithm(model, args.algorithm, args)
    except ConvergenceError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc
    config = {"model": str(args.model), "gamma": model.gamma, "epsilon": args.epsilon,
              "max_iters": args.max_iters, "max_policies": args.max_policies,
              "seed": args.seed, "collapse": not args.keep_duplicates,
              "stop_on_stall": args.stop_on_stall}
    if args.algorithm == "spea2":
        config.update(spea2_pop=args.spea2_pop, spea2_archive=args.spea2_archive,
                      spea2_time=args.spea2_time, spea2_warm_start=args.spea2_warm_start,
                      generations=front.info.get("generations"))
    result = ExperimentResult.from_frontier(args.instance_id or instance_id_of(model),
                                            args.algorithm, front, wall, config)
    row = summary_row(result, model)
    if args.out:
        try:
            result.save(args.out)
        except OSError as exc:
            raise CliError(f"cannot write {args.out}: {exc}") from exc
        text = _csv(SUMMARY_COLUMNS, [row]) if args.format == "csv" else json.dumps(row) + "\n"
    else:
        text = (_csv(SUMMARY_COLUMNS, [row]) if args.format == "csv"
                else json.dumps(result.to_dict()) + "\n")
    sys.stdout.write(text)
    if args.summary:
        _emit(_csv(SUMMARY_COLUMNS, [row]), args.summary)
    if result.truncated:
        log.warning("search stopped by its budget; the frontier may be incomplete")
        return EXIT_TRUNCATED
    return EXIT_OK


# comparison ----------------------------------------------------------------------

def _load_result(path) -> ExperimentResult:
    try:
        return ExperimentResult.load(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc


def cmd_compare(args) -> int:
    x, y = _load_result(args.result_x), _load_result(args.result_y)
    if x.instance_id != y.instance_id:
        raise CliError(f"instance mismatch: {x.instance_id} vs {y.instance_id}")
    if not x.values or not y.values:
        raise CliError("both results need a non-empty frontier")
    rep = coverage(x.values, y.values)
    row = {"instance_id": x.instance_id, "algo_x": x.algorithm, "algo_y": y.algorithm,
           "c_xy": rep.c_xy, "c_yx": rep.c_yx, "size_x": rep.size_x, "size_y": rep.size_y,
           "t_x": x.wall_seconds, "t_y": y.wall_seconds}
    text = coverage_csv([row]) if args.format == "csv" else json.dumps(row) + "\n"
    _emit(text, args.out)
    return EXIT_OK


# benchmarking --------------------------------------------------------------------

def _bench_instances(args) -> list[tuple]:
    out = []
    for seed in range(args.seed, args.seed + args.seeds):
        if args.family == "grid":
            out += [("grid", GridConfig(n_rows=k, m_cols=k, noise_sd=args.noise_sd,
                                        rng_seed=seed, gamma=args.gamma), seed)
                    for k in args.sizes]
        elif args.family == "queue":
            out += [("queue", QueueConfig(m=m, c=c, noise_sd=args.noise_sd, rng_seed=seed,
                                          gamma=args.gamma), seed)
                    for m in args.queue_m for c in args.queue_c]
        elif seed == args.seed:  # the tour-guide model has no randomness
            out += [("antg", AntgConfig(n=k, gamma=args.gamma), seed) for k in args.sizes]
    return out


def _bench_one(task) -> dict:
    family, cfg, seed, max_policies, time_limit = task
    gen = {"grid": gen_grid, "queue": gen_queue, "antg": gen_antg}[family]
    model = gen(cfg)
    t0 = time.perf_counter()
    front = pareto_heuristic(model, budget=SearchBudget(max_policies, time_limit))
    wall = time.perf_counter() - t0
    count = len(front)
    return {"family": family, "instance_id": instance_id_of(model), "seed": seed,
            "n_states": model.n_states, "n_actions": model.n_actions,
            "wall_seconds": f"{wall:.6f}", "policy_count": count,
            "seconds_per_policy": f"{wall / count:.6f}" if count else "",
            "eval_count": front.eval_count, "truncated": int(front.truncated)}


def cmd_bench(args) -> int:
    try:
        tasks = [(fam, cfg, seed, args.max_policies, args.time_limit)
                 for fam, cfg, seed in _bench_instances(args)]
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_bench_one, tasks))
    else:
        rows = [_bench_one(t) for t in tasks]
    rows.sort(key=lambda r: (r["n_states"], r["seed"]))
    _emit(_csv(BENCH_COLUMNS, rows), args.out)
    return EXIT_OK


# argument parsing ------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """Argument errors exit with code 1 instead of argparse's 2 (2 means truncation)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _add_solver_flags(p) -> None:
    p.add_argument("--epsilon", type=float, default=1e-8,
                   help="value-iteration accuracy (default 1e-8)")
    p.add_argument("--max-iters", type=_positive_int, default=100_000)
    p.add_argument("--solver", choices=("auto", "direct", "iterative"), default="auto",
                   help="linear solver for policy evaluation")
    p.add_argument("--max-policies", type=_positive_int, default=50_000,
                   help="evaluation budget of the exact and heuristic searches")
    p.add_argument("--time-limit", type=float, default=None,
                   help="wall-clock budget in seconds for the exact and heuristic searches")
    p.add_argument("--keep-duplicates", action="store_true",
                   help="search over duplicate actions too instead of one per group")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sbmdp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="write a benchmark model as JSON")
    fams = gen.add_subparsers(dest="family", required=True, parser_class=_Parser)
    for name in ("queue", "grid", "antg"):
        f = fams.add_parser(name)
        f.add_argument("--gamma", type=float, default=0.9)
        f.add_argument("--seed", type=int, default=0)
        f.add_argument("--out", help="output path (default stdout)")
        if name != "antg":
            f.add_argument("--noise-sd", type=float, default=0.05)
    q = fams.choices["queue"]
    q.add_argument("--m", type=int, default=2, help="queue capacity")
    q.add_argument("--c", type=int, default=3, help="number of servers")
    q.add_argument("--p", type=float, default=0.3, help="arrival probability per slot")
    q.add_argument("--q", type=float, default=0.2, help="service probability per slot")
    q.add_argument("--nu", type=float, default=0.1, help="start-up completion probability")
    q.add_argument("--omega1", type=float, default=1.0, help="energy weight of an on server")
    q.add_argument("--omega2", type=float, default=0.8, help="energy weight while starting")
    q.add_argument("--omega3", type=float, default=0.1, help="energy weight of an off server")
    q.add_argument("--shared-noise", action="store_true",
                   help="one noise draw per server configuration instead of per action")
    g = fams.choices["grid"]
    g.add_argument("--rows", type=_positive_int, default=5)
    g.add_argument("--cols", type=_positive_int, default=5, help="columns = actions")
    a = fams.choices["antg"]
    a.add_argument("--n", type=int, default=10, help="grid side (>= 10)")
    a.add_argument("--diagonal", choices=("nw", "se"), default="nw",
                   help="action pair used on the diagonal i == j")
    gen.set_defaults(func=cmd_generate)

    solve = sub.add_parser("solve", help="compute a frontier or a single optimal policy")
    solve.add_argument("model", help="model JSON file")
    solve.add_argument("--algorithm", choices=ALGORITHMS, default="heuristic")
    solve.add_argument("--gamma", type=float, default=None,
                       help="override the model's discount factor")
    _add_solver_flags(solve)
    solve.add_argument("--stop-on-stall", action="store_true",
                       help="end the heuristic after the first pass that leaves the "
                            "frontier unchanged (faster, may miss policies)")
    solve.add_argument("--seed", type=int, default=0, help="SPEA2 random seed")
    solve.add_argument("--spea2-pop", type=_positive_int, default=100)
    solve.add_argument("--spea2-archive", type=_positive_int, default=50_000)
    solve.add_argument("--spea2-time", type=float, default=1000.0,
                       help="SPEA2 wall-clock budget in seconds")
    solve.add_argument("--spea2-generations", type=_positive_int, default=None,
                       help="stop SPEA2 after this many generations instead of by time")
    solve.add_argument("--spea2-warm-start", action=argparse.BooleanOptionalAction,
                       default=True,
                       help="seed the SPEA2 population with the worst-, average- and "
                            "best-case optimal policies")
    solve.add_argument("--instance-id", help="label for the result (default: model hash)")
    solve.add_argument("--out", help="write the result JSON here")
    solve.add_argument("--summary", help="write the summary CSV row here")
    solve.add_argument("--format", choices=("json", "csv"), default="json")
    solve.set_defaults(func=cmd_solve)

    comp = sub.add_parser("compare", help="coverage of two results on the same instance")
    comp.add_argument("result_x")
    comp.add_argument("result_y")
    comp.add_argument("--out")
    comp.add_argument("--format", choices=("json", "csv"), default="csv")
    comp.set_defaults(func=cmd_compare)

    bench = sub.add_parser("bench", help="heuristic timings over a family sweep (CSV)")
    bench.add_argument("--family", choices=("grid", "queue", "antg"), default="grid")
    bench.add_argument("--sizes", type=int, nargs="*", default=[5, 10, 15, 20],
                       help="grid side n = m, or tour-guide n")
    bench.add_argument("--queue-m", type=int, nargs="*", default=[2])
    bench.add_argument("--queue-c", type=int, nargs="*", default=[2, 3])
    bench.add_argument("--seeds", type=int, default=4, help="seeds per size")
    bench.add_argument("--seed", type=int, default=0, help="first seed")
    bench.add_argument("--gamma", type=float, default=0.9)
    bench.add_argument("--noise-sd", type=float, default=0.05)
    bench.add_argument("--max-policies", type=_positive_int, default=50_000)
    bench.add_argument("--time-limit", type=float, default=None)
    bench.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    bench.add_argument("--out")
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("BMDP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"sbmdp: {exc}", file=sys.stderr)
        return exc.code
    except ValueError as exc:
        print(f"sbmdp: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
