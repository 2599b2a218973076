"""Backchaining planner producing the GP baseline tree.

Facts are condition behaviors; a symbolic state is the set of facts that
hold (closed world).  Starting from a Sequence of goal conditions, the
planner repeatedly runs the tree symbolically and replaces the condition
responsible for failure with ``Fallback(condition, Sequence(pre..., action))``.
It knows nothing about collisions or balance.
"""
from __future__ import annotations

from dataclasses import dataclass

from .bt import (FALLBACK, LEAF, SEQUENCE, Behavior, Node, Path, Status, get, leaf,
                 replace, validate, walk)
from .world import TaskSpec, WorldState, eval_condition

MAX_ITERATIONS = 50
MAX_PASSES = 20


class PlanningError(RuntimeError):
    pass


class UnachievableGoal(PlanningError):
    def __init__(self, fact: Behavior):
        super().__init__(f"no action model achieves {fact}")
        self.fact = fact


class PlanDepthExceeded(PlanningError):
    pass


@dataclass(frozen=True)
class ActionModel:
    behavior: Behavior
    pre: tuple[Behavior, ...] = ()
    post: tuple[Behavior, ...] = ()
    delete: tuple[Behavior, ...] = ()

    def __post_init__(self):
        if self.behavior.is_condition:
            raise ValueError(f"{self.behavior} is not an action")
        if not self.post:
            raise ValueError(f"model for {self.behavior} has no postconditions")


def models_from_config(task: TaskSpec) -> list[ActionModel]:
    def facts(texts):
        return tuple(Behavior.parse(t) for t in texts)
    return [ActionModel(Behavior.parse(m["behavior"]), facts(m.get("pre", ())),
                        facts(m.get("post", ())), facts(m.get("delete", ())))
            for m in task.planner.get("models", ())]


def goals_from_config(task: TaskSpec) -> list[Behavior]:
    return [Behavior.parse(t) for t in task.planner.get("goals", ())]


def initial_facts(task: TaskSpec, models, goals) -> set[Behavior]:
    """Facts true in the task's start state, over every condition mentioned
    by the pool, the goals or the models."""
    world = WorldState.from_task(task)
    candidates = {b for b in task.behavior_pool if b.is_condition} | set(goals)
    for m in models:
        candidates.update(m.pre + m.post + m.delete)
    return {f for f in candidates if eval_condition(f, world, task) is Status.SUCCESS}


def symbolic_tick(tree: Node, state: set, models, _path: Path = ()):
    """One symbolic pass over `tree`, updating `state` in place.

    Returns ``(status, failing_condition_path, actions_run)``.  Actions
    succeed, applying their effects, when some model for them has its
    preconditions satisfied.
    """
    by_behavior = {}
    for m in models:
        by_behavior.setdefault(m.behavior, []).append(m)
    ran = []
    status, cause = _sym(tree, state, by_behavior, _path, ran)
    return status, cause, ran


def _sym(node, state, by_behavior, path, ran):
    if node.kind == LEAF:
        b = node.behavior
        if b.is_condition:
            return (Status.SUCCESS, None) if b in state else (Status.FAILURE, path)
        for m in by_behavior.get(b, ()):
            if set(m.pre) <= state:
                state.difference_update(m.delete)
                state.update(m.post)
                ran.append(b)
                return Status.SUCCESS, None
        return Status.FAILURE, None
    cause = None
    for i, child in enumerate(node.children):
        status, child_cause = _sym(child, state, by_behavior, path + (i,), ran)
        if child_cause is not None:
            cause = child_cause
        if node.kind == SEQUENCE and status is not Status.SUCCESS:
            return status, child_cause
        if node.kind == FALLBACK and status is not Status.FAILURE:
            return status, None
    if node.kind == SEQUENCE:
        return Status.SUCCESS, None
    return Status.FAILURE, cause


def expand(tree: Node, failing: Path, models) -> Node:
    """Replace the condition at `failing` with Fallback(condition,
    Sequence(preconditions..., action)) using the first model producing it."""
    cond = get(tree, failing)
    if cond.kind != LEAF or not cond.behavior.is_condition:
        raise PlanningError(f"node {failing} is not a condition")
    fact = cond.behavior
    for m in models:
        if fact in m.post:
            break
    else:
        raise UnachievableGoal(fact)
    if m.pre:
        body = Node(SEQUENCE, tuple(leaf(p) for p in m.pre) + (leaf(m.behavior),))
    else:
        body = leaf(m.behavior)
    return replace(tree, failing, Node(FALLBACK, (cond, body)))


def run_symbolic(tree: Node, start: set, models):
    """Pass over the tree until a pass succeeds without running any action,
    or a pass fails.  Returns (status, failing path)."""
    state = set(start)
    for _ in range(MAX_PASSES):
        status, cause, ran = symbolic_tick(tree, state, models)
        if status is Status.FAILURE:
            return status, cause
        if not ran:
            return Status.SUCCESS, None
    return Status.RUNNING, None


def plan(task: TaskSpec, models=None, goals=None,
         max_iterations: int = MAX_ITERATIONS) -> Node:
    models = models_from_config(task) if models is None else list(models)
    goals = goals_from_config(task) if goals is None else list(goals)
    if not goals:
        raise PlanningError("no goal conditions")
    start = initial_facts(task, models, goals)
    tree = Node(SEQUENCE, tuple(leaf(g) for g in goals))
    for _ in range(max_iterations):
        status, failing = run_symbolic(tree, start, models)
        if status is Status.SUCCESS:
            problems = validate(tree)
            if problems:
                raise PlanningError(f"planned tree is invalid: {problems}")
            return tree
        if failing is None:
            raise PlanningError(f"symbolic execution did not converge ({status.value})")
        tree = expand(tree, failing, models)
    raise PlanDepthExceeded(f"no plan within {max_iterations} expansions")


def condition_paths(tree: Node) -> list[Path]:
    return [p for p, n in walk(tree) if n.kind == LEAF and n.behavior.is_condition]
