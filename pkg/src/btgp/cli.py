"""Command line entry point: ``btgp plan|evolve|experiment|render|eval``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .bt import ParseError, read_tree, serialize, to_dot, validate
from .experiment import (ExperimentPlan, PlanError, default_out_dir, run, run_one,
                         write_dot)
from .gp import VARIANTS, GpParams
from .planner import PlanningError, plan
from .tasks import TaskLoadError, load_task
from .world import ConfigurationError, compute_fitness, run_episode

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 by default; usage problems are config errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _read_tree_file(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read tree file: {exc}") from None
    return read_tree(text)


def _gp_params(path: str | None) -> GpParams:
    if path is None:
        return GpParams()
    try:
        return GpParams.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UsageError(f"bad GP parameter file {path}: {exc}") from None


def cmd_plan(args) -> int:
    task = load_task(args.task)
    tree = plan(task)
    result = run_episode(tree, task)
    print(serialize(tree))
    print(f"nodes: {len(tree)}")
    print(f"end: {result.end_reason} after {result.ticks_used} ticks")
    print(f"fitness: {compute_fitness(result, tree, task):.6f}")
    if args.dot:
        write_dot(tree, args.dot, "planned")
    return EXIT_OK


def cmd_eval(args) -> int:
    task = load_task(args.task)
    tree = _read_tree_file(args.tree)
    problems = validate(tree)
    if problems:
        print("warning: tree breaks GP constraints: " + "; ".join(problems), file=sys.stderr)
    result = run_episode(tree, task)
    print(f"end: {result.end_reason} after {result.ticks_used} ticks")
    print(f"held at end: {'yes' if result.held_at_end else 'no'}")
    print(f"fitness: {compute_fitness(result, tree, task):.6f}")
    return EXIT_OK


def cmd_render(args) -> int:
    dot = to_dot(_read_tree_file(args.tree), args.name)
    if args.output:
        Path(args.output).write_text(dot)
    else:
        sys.stdout.write(dot)
    return EXIT_OK


def _progress(every: int):
    def report(rec):
        if rec.generation % every == 0:
            print(f"  gen {rec.generation}: episodes {rec.episodes}, "
                  f"best {rec.best_fitness:.3f}", file=sys.stderr)
    return report if every > 0 else None


def cmd_evolve(args) -> int:
    task = load_task(args.task)
    params = _gp_params(args.params)
    generations = args.generations or task.generations_for(args.variant)
    if generations <= 0:
        raise UsageError("--generations must be positive")
    out = Path(args.out) if args.out else default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    baseline = None
    if args.variant != "scratch":
        baseline = plan(task)
        write_dot(baseline, out / f"planned_{task.name}.dot", "planned")
    rec = run_one(task, args.variant, args.seed, generations, out, params, baseline,
                  args.jobs, _progress(args.report_every))
    best = rec.trace.best
    print(f"best fitness: {best.fitness:.6f} ({len(best.tree)} nodes)")
    print(f"best tree: {serialize(best.tree)}")
    print(f"episodes: {rec.trace.episodes}, unique ratio {rec.unique_episode_ratio:.3f}")
    for f in rec.files:
        print(f"wrote {f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    xp = ExperimentPlan.from_file(args.plan_file)
    if args.out:
        xp.out_dir = Path(args.out)
    records = run(xp, args.jobs, _progress(args.report_every))
    for r in records:
        print(f"{r.task} {r.variant} seed {r.seed}: best {r.trace.best.fitness:.6f} "
              f"episodes {r.trace.episodes} ratio {r.unique_episode_ratio:.3f} "
              f"({r.seconds:.1f}s)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="btgp", description="Plan and evolve behavior trees for block stacking.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("plan", help="print the planned tree and its fitness")
    s.add_argument("task", help="task name (task1..task4) or config path")
    s.add_argument("--dot", help="also write the tree as DOT to this file")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("eval", help="run one episode of a tree file")
    s.add_argument("task")
    s.add_argument("tree", help="file with canonical tree text or DOT")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("render", help="convert a tree file to DOT")
    s.add_argument("tree")
    s.add_argument("-o", "--output")
    s.add_argument("--name", default="bt", help="graph name")
    s.set_defaults(func=cmd_render)

    for name, func, helptext in (("evolve", cmd_evolve, "one GP run"),
                                 ("experiment", cmd_experiment, "runs from a plan file")):
        s = sub.add_parser(name, help=helptext)
        if name == "evolve":
            s.add_argument("task")
            s.add_argument("--variant", choices=VARIANTS, default="scratch")
            s.add_argument("--seed", type=int, default=0)
            s.add_argument("--generations", type=int, help="default: task config")
            s.add_argument("--params", help="JSON file overriding GP parameters")
        else:
            s.add_argument("plan_file")
        s.add_argument("--out", help="output directory (default $BTGP_OUT or ./results)")
        s.add_argument("--jobs", type=int, default=1, help="concurrent evaluations")
        s.add_argument("--report-every", type=int, default=0, metavar="N",
                       help="print progress every N generations")
        s.set_defaults(func=func)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) < 1:
        print("btgp: error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (UsageError, TaskLoadError, PlanError, ParseError) as exc:
        print(f"btgp: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PlanningError, ConfigurationError, OSError) as exc:
        print(f"btgp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
