"""Genetic programming over behavior trees.

Operators never repair: an invalid candidate is thrown away and drawn again.
Parents are picked by linear rank-proportional selection; the planner
baseline, when present, is kept in the population and may have its rank
boosted for parent selection.
"""
from __future__ import annotations

import logging
import random
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

from .bt import (CONTROL_KINDS, FALLBACK, LEAF, SEQUENCE, Node, Path, get, insert,
                 is_valid, parse, replace, serialize, structural_hash, validate, walk)
from .world import TaskSpec, evaluate

log = logging.getLogger(__name__)

VARIANTS = ("scratch", "baseline", "baseline-boost-crossover", "baseline-boost-all")


class OperatorExhausted(RuntimeError):
    """No valid offspring within the resampling budget."""


@dataclass(frozen=True)
class GpParams:
    population_size: int = 16
    initial_tree_size: int = 8
    mutation_parents: int = 8
    mutation_offspring_per_parent: int = 2
    p_add: float = 0.40
    p_delete: float = 0.30
    p_change: float = 0.30
    crossover_parents: int = 8
    crossover_offspring_per_parent: int = 2
    elites: int = 2
    control_node_prob: float = 0.50
    max_resample_attempts: int = 100
    allow_identical: bool = False

    def __post_init__(self):
        if abs(self.p_add + self.p_delete + self.p_change - 1.0) > 1e-9:
            raise ValueError("mutation probabilities must sum to 1")
        if not 0 <= self.elites < self.population_size:
            raise ValueError("elites must be smaller than the population")
        if self.crossover_parents % 2:
            raise ValueError("crossover parents are paired; need an even count")
        if max(self.mutation_parents, self.crossover_parents) > self.population_size:
            raise ValueError("cannot select more parents than individuals")

    @classmethod
    def from_dict(cls, doc: dict) -> "GpParams":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown GP parameters: {sorted(unknown)}")
        return cls(**doc)

    @property
    def offspring_per_generation(self) -> int:
        return (self.mutation_parents * self.mutation_offspring_per_parent
                + self.crossover_parents * self.crossover_offspring_per_parent)


@dataclass
class Individual:
    tree: Node
    fitness: float | None = None
    is_baseline: bool = False
    born: int = 0


# -- random nodes and trees ------------------------------------------------------

def random_leaf(rng: random.Random, pool) -> Node:
    return Node(LEAF, (), pool[rng.randrange(len(pool))])


def random_node(rng: random.Random, pool, params: GpParams) -> Node:
    """A leaf, or a control node carrying two random leaf children."""
    if rng.random() < params.control_node_prob:
        kind = CONTROL_KINDS[rng.randrange(2)]
        return Node(kind, (random_leaf(rng, pool), random_leaf(rng, pool)))
    return random_leaf(rng, pool)


def slots(tree: Node) -> list[tuple[Path, int]]:
    """Every (control parent, child index) position a node can be inserted at."""
    return [(path, i) for path, node in walk(tree) if node.kind != LEAF
            for i in range(len(node.children) + 1)]


def random_tree(rng: random.Random, pool, size: int, params: GpParams = GpParams()) -> Node:
    """Grow a valid tree of exactly `size` nodes by random insertions."""
    if size < 2:
        raise ValueError("a valid tree has at least two nodes")
    if not pool:
        raise ValueError("empty behavior pool")
    for _ in range(params.max_resample_attempts):
        tree = Node(CONTROL_KINDS[rng.randrange(2)], (random_leaf(rng, pool),))
        if is_valid(tree):
            break
    else:
        raise OperatorExhausted("could not create a root")
    while len(tree) < size:
        remaining = size - len(tree)
        for _ in range(params.max_resample_attempts):
            node = random_node(rng, pool, params)
            if len(node) > remaining:
                node = Node(node.kind, node.children[:remaining - 1]) if remaining > 1 \
                    else random_leaf(rng, pool)
            parent, index = rng.choice(slots(tree))
            candidate = insert(tree, parent, index, node)
            if is_valid(candidate):
                tree = candidate
                break
        else:
            raise OperatorExhausted(f"could not grow tree beyond {len(tree)} nodes")
    return tree


# -- mutation and crossover ---------------------------------------------------------

def _mutate_once(tree: Node, rng: random.Random, pool, params: GpParams, op: str):
    paths = [p for p, _ in walk(tree)]
    if op == "add":
        parent, index = rng.choice(slots(tree))
        return insert(tree, parent, index, random_node(rng, pool, params))
    if op == "delete":
        if len(paths) < 2:
            return None
        return replace(tree, paths[1 + rng.randrange(len(paths) - 1)], None)
    path = rng.choice(paths)
    old = get(tree, path)
    new = random_node(rng, pool, params)
    if old.kind != LEAF and new.kind != LEAF:
        new = Node(new.kind, old.children)
    return replace(tree, path, new)


def mutate_with_op(tree: Node, rng: random.Random, pool,
                   params: GpParams = GpParams()) -> tuple[Node, str]:
    """Mutate `tree`; returns the offspring and the operation used."""
    ops = ("add", "delete", "change")
    weights = (params.p_add, params.p_delete, params.p_change)
    # The type is drawn once and candidates are resampled within it, so the
    # configured type frequencies hold for the offspring actually produced.
    # A type with no valid outcome (e.g. delete on a two-node tree) is redrawn.
    for _ in range(len(ops) * 4):
        op = rng.choices(ops, weights)[0]
        for _ in range(params.max_resample_attempts):
            candidate = _mutate_once(tree, rng, pool, params, op)
            if candidate is not None and candidate != tree and is_valid(candidate):
                return candidate, op
    raise OperatorExhausted("mutation found no valid offspring")


def mutate(tree: Node, rng: random.Random, pool, params: GpParams = GpParams()) -> Node:
    return mutate_with_op(tree, rng, pool, params)[0]


def crossover_insert(recipient: Node, donor: Node, rng: random.Random,
                     params: GpParams = GpParams()) -> Node:
    """Copy a random subtree of `donor` into a random slot of `recipient`."""
    donor_nodes = [n for _, n in walk(donor)]
    recipient_slots = slots(recipient)
    for _ in range(params.max_resample_attempts):
        sub = donor_nodes[rng.randrange(len(donor_nodes))]
        parent, index = recipient_slots[rng.randrange(len(recipient_slots))]
        candidate = insert(recipient, parent, index, sub)
        if is_valid(candidate):
            return candidate
    raise OperatorExhausted("crossover found no valid insertion")


# -- selection -----------------------------------------------------------------------

def ranked(population: list[Individual], boost: bool = False) -> list[Individual]:
    """Population ordered best first; ties keep population order.

    With `boost`, the baseline is ranked as if its fitness equalled the best
    of the others, directly behind the individual holding that fitness.
    """
    order = sorted(population, key=lambda ind: -ind.fitness)
    if boost:
        base = [ind for ind in order if ind.is_baseline]
        if base and len(order) > 1:
            b = base[0]
            others = [ind for ind in order if ind is not b]
            if b.fitness < others[0].fitness:
                order = others[:1] + [b] + others[1:]
    return order


def rank_select(population: list[Individual], count: int, rng: random.Random,
                boost: bool = False) -> list[Individual]:
    """Draw `count` distinct individuals with probability proportional to
    linear rank weight N - i (rank 0 is best)."""
    if count > len(population):
        raise ValueError("count exceeds population size")
    order = ranked(population, boost)
    n = len(order)
    weights = [n - i for i in range(n)]
    chosen = []
    for _ in range(count):
        r = rng.random() * sum(weights)
        acc = 0.0
        for i, w in enumerate(weights):
            acc += w
            if w and r < acc:
                break
        else:
            i = max(j for j, w in enumerate(weights) if w)
        chosen.append(order[i])
        weights[i] = 0
    return chosen


# -- evaluation --------------------------------------------------------------------

_worker_task: TaskSpec | None = None


def _init_worker(task: TaskSpec) -> None:
    global _worker_task
    _worker_task = task


def _evaluate_text(text: str) -> float:
    return evaluate(parse(text), _worker_task)


class Evaluator:
    """Memoizing fitness evaluator: every distinct tree is simulated once.

    With ``jobs > 1`` unseen trees of a batch are simulated in worker
    processes; results are merged in submission order.
    """

    def __init__(self, task: TaskSpec, jobs: int = 1):
        self.task = task
        self.jobs = jobs
        self.cache: dict[str, float] = {}
        self.hits = 0
        self._pool = None

    @property
    def episodes(self) -> int:
        return len(self.cache)

    def evaluate(self, tree: Node) -> float:
        return self.evaluate_many([tree])[0]

    def evaluate_many(self, trees: list[Node]) -> list[float]:
        keys = [structural_hash(t) for t in trees]
        todo = {}
        for key, tree in zip(keys, trees):
            if key not in self.cache and key not in todo:
                todo[key] = tree
        if todo:
            items = list(todo.items())
            if self.jobs > 1 and len(items) > 1:
                if self._pool is None:
                    self._pool = ProcessPoolExecutor(self.jobs, initializer=_init_worker,
                                                     initargs=(self.task,))
                results = list(self._pool.map(_evaluate_text,
                                              [serialize(t) for _, t in items]))
            else:
                results = [evaluate(t, self.task) for _, t in items]
            for (key, _), fit in zip(items, results):
                self.cache[key] = fit
        self.hits += len(trees) - len(todo)
        return [self.cache[k] for k in keys]

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None


# -- generations ---------------------------------------------------------------------

@dataclass
class GenerationRecord:
    generation: int
    episodes: int
    best_fitness: float
    mean_fitness: float
    best_tree: str


@dataclass
class EvolutionTrace:
    task: str
    variant: str
    seed: int
    records: list[GenerationRecord] = field(default_factory=list)
    best: Individual | None = None
    operator_failures: int = 0

    @property
    def episodes(self) -> int:
        return self.records[-1].episodes if self.records else 0

    def unique_episode_ratio(self, params: GpParams = GpParams()) -> float:
        """Episodes simulated after generation 0, over the maximum possible."""
        gens = len(self.records) - 1
        if gens <= 0:
            return 0.0
        new = self.records[-1].episodes - self.records[0].episodes
        return new / (params.offspring_per_generation * gens)


def _record(generation: int, pop: list[Individual], evaluator: Evaluator) -> GenerationRecord:
    best = ranked(pop)[0]
    return GenerationRecord(generation, evaluator.episodes, best.fitness,
                            statistics.fmean(ind.fitness for ind in pop), serialize(best.tree))


def _distinct(candidates: list[Individual], minimum: int) -> list[Individual]:
    """Drop repeated trees, keeping the first (oldest) copy; duplicates are
    restored in order if too few distinct trees remain."""
    seen, unique, repeats = set(), [], []
    for ind in candidates:
        (repeats if ind.tree in seen else unique).append(ind)
        seen.add(ind.tree)
    if len(unique) < minimum:
        unique += repeats[:minimum - len(unique)]
    return unique


def evolve_generation(pop: list[Individual], params: GpParams, variant: str,
                      evaluator: Evaluator, rng: random.Random, pool,
                      baseline: Individual | None = None, generation: int = 1,
                      failures: list | None = None) -> list[Individual]:
    """One generation: mutation, insert-crossover, evaluation, survivors."""
    boost_mutation = variant == "baseline-boost-all"
    boost_crossover = variant in ("baseline-boost-crossover", "baseline-boost-all")
    offspring: list[Node] = []

    def attempt(op, parent, *args):
        try:
            return op(*args)
        except OperatorExhausted:
            if failures is not None:
                failures.append(op.__name__)
            return parent.tree

    for parent in rank_select(pop, params.mutation_parents, rng, boost_mutation):
        for _ in range(params.mutation_offspring_per_parent):
            offspring.append(attempt(mutate, parent, parent.tree, rng, pool, params))

    chosen = rank_select(pop, params.crossover_parents, rng, boost_crossover)
    for a, b in zip(chosen[::2], chosen[1::2]):
        for recipient, donor in ((a, b), (b, a)):
            for _ in range(params.crossover_offspring_per_parent):
                offspring.append(attempt(crossover_insert, recipient,
                                         recipient.tree, donor.tree, rng, params))

    fitnesses = evaluator.evaluate_many(offspring)
    candidates = list(pop) + [Individual(t, f, False, generation)
                              for t, f in zip(offspring, fitnesses)]
    if not params.allow_identical:
        candidates = _distinct(candidates, params.population_size)

    by_merit = sorted(range(len(candidates)),
                      key=lambda i: (-candidates[i].fitness, candidates[i].born, i))
    elites = [candidates[i] for i in by_merit[:params.elites]]
    rest = [candidates[i] for i in sorted(by_merit[params.elites:])]
    survivors = elites + rank_select(rest, params.population_size - params.elites, rng)

    if baseline is not None and variant != "scratch" and \
            not any(ind.is_baseline for ind in survivors):
        worst = min(range(params.elites, len(survivors)),
                    key=lambda i: (survivors[i].fitness, -i))
        survivors[worst] = baseline
    return survivors


def run_evolution(params: GpParams, task: TaskSpec, variant: str, seed: int,
                  generations: int, baseline_tree: Node | None = None,
                  evaluator: Evaluator | None = None, jobs: int = 1,
                  progress=None) -> EvolutionTrace:
    """Evolve from a random population (plus the baseline, if any)."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if variant != "scratch" and baseline_tree is None:
        raise ValueError(f"variant {variant!r} needs a baseline tree")
    if baseline_tree is not None and validate(baseline_tree):
        raise ValueError(f"invalid baseline tree: {validate(baseline_tree)}")
    rng = random.Random(seed)
    pool = task.behavior_pool
    own_evaluator = evaluator is None
    evaluator = evaluator or Evaluator(task, jobs)
    trace = EvolutionTrace(task.name, variant, seed)
    failures: list[str] = []
    try:
        trees = [random_tree(rng, pool, params.initial_tree_size, params)
                 for _ in range(params.population_size)]
        baseline = None
        slot = None
        if variant != "scratch":
            slot = rng.randrange(len(trees))
            trees[slot] = baseline_tree
        fitnesses = evaluator.evaluate_many(trees)
        pop = [Individual(t, f, False, 0) for t, f in zip(trees, fitnesses)]
        if slot is not None:
            baseline = pop[slot]
            baseline.is_baseline = True
        trace.records.append(_record(0, pop, evaluator))
        for g in range(1, generations + 1):
            pop = evolve_generation(pop, params, variant, evaluator, rng, pool,
                                    baseline, g, failures)
            trace.records.append(_record(g, pop, evaluator))
            if progress is not None:
                progress(trace.records[-1])
        trace.best = ranked(pop)[0]
        trace.operator_failures = len(failures)
    finally:
        if own_evaluator:
            evaluator.close()
    return trace
