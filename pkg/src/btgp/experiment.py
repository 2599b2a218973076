"""Multi-seed experiment runs, learning-curve CSVs and DOT exports.

Every output file is a pure function of (task, variant, seed, generations,
GP parameters), so reruns and different ``jobs`` values give identical bytes.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .bt import Node, to_dot
from .gp import VARIANTS, EvolutionTrace, GpParams, run_evolution
from .planner import plan
from .tasks import load_task
from .world import TaskSpec

log = logging.getLogger(__name__)

OUT_ENV = "BTGP_OUT"
DEFAULT_OUT = "results"
CSV_HEADER = ["generation", "episodes", "best_fitness", "mean_fitness", "best_tree"]
SUMMARY_HEADER = ["variant", "generation", "seeds", "mean_episodes",
                  "mean_best_fitness", "std_best_fitness"]


class PlanError(ValueError):
    """An experiment plan that cannot be run as written."""


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV) or DEFAULT_OUT)


@dataclass
class ExperimentPlan:
    task: str
    variants: tuple[str, ...] = VARIANTS
    seeds: tuple[int, ...] | None = None
    generations: dict = field(default_factory=dict)  # variant -> count; missing = task default
    out_dir: Path | None = None
    gp: GpParams = field(default_factory=GpParams)

    def __post_init__(self):
        self.variants = tuple(self.variants)
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise PlanError(f"unknown variants {unknown}; choose from {list(VARIANTS)}")
        if not self.variants:
            raise PlanError("no variants")
        if self.seeds is not None:
            self.seeds = tuple(int(s) for s in self.seeds)
            if len(set(self.seeds)) != len(self.seeds):
                raise PlanError("seeds must be distinct")
        for v, n in self.generations.items():
            if v not in VARIANTS:
                raise PlanError(f"generations given for unknown variant {v!r}")
            if int(n) <= 0:
                raise PlanError(f"generations for {v} must be positive")

    def seeds_for(self, task: TaskSpec) -> tuple[int, ...]:
        if self.seeds is not None:
            return self.seeds
        return task.seeds or tuple(range(10))

    def generations_for(self, task: TaskSpec, variant: str) -> int:
        return int(self.generations.get(variant) or task.generations_for(variant))

    @classmethod
    def from_file(cls, path) -> "ExperimentPlan":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise PlanError(f"{path}: {exc}") from None
        if not isinstance(doc, dict) or "task" not in doc:
            raise PlanError(f"{path}: a plan needs at least a 'task' field")
        gens = doc.get("generations", {})
        variants = tuple(doc.get("variants", VARIANTS))
        if isinstance(gens, int):
            gens = {v: gens for v in variants}
        try:
            gp = GpParams.from_dict(doc.get("gp", {}))
        except (TypeError, ValueError) as exc:
            raise PlanError(f"{path}: {exc}") from None
        out = doc.get("out_dir")
        return cls(doc["task"], variants, doc.get("seeds"), dict(gens),
                   Path(out) if out else None, gp)


@dataclass
class RunRecord:
    task: str
    variant: str
    seed: int
    generations: int
    trace: EvolutionTrace
    seconds: float
    unique_episode_ratio: float
    files: list[Path] = field(default_factory=list)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_curve_csv(trace: EvolutionTrace, path) -> Path:
    if not trace.records:
        raise ValueError("empty trace")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in trace.records:
            w.writerow([r.generation, r.episodes, _fmt(r.best_fitness),
                        _fmt(r.mean_fitness), r.best_tree])
    return path


def read_curve_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_dot(tree: Node, path, name: str = "bt") -> Path:
    path = Path(path)
    path.write_text(to_dot(tree, name))
    return path


def write_summary(task_name: str, traces: dict, path) -> Path:
    """Per variant and generation: mean and (population) standard deviation
    of best fitness across seeds, plus the mean episode count."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for variant, runs in traces.items():
            length = min(len(t.records) for t in runs)
            for g in range(length):
                best = [t.records[g].best_fitness for t in runs]
                episodes = [t.records[g].episodes for t in runs]
                w.writerow([variant, g, len(runs), _fmt(statistics.fmean(episodes)),
                            _fmt(statistics.fmean(best)), _fmt(statistics.pstdev(best))])
    return path


def run_one(task: TaskSpec, variant: str, seed: int, generations: int,
            out_dir, params: GpParams = GpParams(), baseline: Node | None = None,
            jobs: int = 1, progress=None) -> RunRecord:
    """Evolve one (variant, seed) and write its CSV and best-tree DOT."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if variant != "scratch" and baseline is None:
        baseline = plan(task)
    start = time.perf_counter()
    trace = run_evolution(params, task, variant, seed, generations,
                          baseline if variant != "scratch" else None,
                          jobs=jobs, progress=progress)
    seconds = time.perf_counter() - start
    stem = f"{task.name}_{variant}_{seed}"
    files = [write_curve_csv(trace, out_dir / f"{stem}.csv"),
             write_dot(trace.best.tree, out_dir / f"best_{stem}.dot")]
    ratio = trace.unique_episode_ratio(params)
    log.info("%s: best %.3f after %d episodes (%.1fs, unique ratio %.2f)",
             stem, trace.best.fitness, trace.episodes, seconds, ratio)
    return RunRecord(task.name, variant, seed, generations, trace, seconds, ratio, files)


def run(xp: ExperimentPlan, jobs: int = 1, progress=None) -> list[RunRecord]:
    task = load_task(xp.task)
    out_dir = Path(xp.out_dir) if xp.out_dir is not None else default_out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    baseline = None
    if any(v != "scratch" for v in xp.variants):
        baseline = plan(task)
        write_dot(baseline, out_dir / f"planned_{task.name}.dot", "planned")
    records, traces = [], {}
    for variant in xp.variants:
        n = xp.generations_for(task, variant)
        for seed in xp.seeds_for(task):
            rec = run_one(task, variant, seed, n, out_dir, xp.gp, baseline, jobs, progress)
            records.append(rec)
            traces.setdefault(variant, []).append(rec.trace)
    write_summary(task.name, traces, out_dir / f"{task.name}_summary.csv")
    return records
