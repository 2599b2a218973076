"""Deterministic rule-based block world used to score behavior trees.

Physics is reduced to three rules: a collision check on the vertical
corridor above a placement, a support check on the placed brick's center of
mass, and a small press-fit residual that only `apply force` removes.
Lengths are mm, time is ticks at a nominal 10 Hz.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

from .bt import LEAF, Behavior, ConfigurationError, Node, Status, tick, walk

EPS = 1e-6
LIFT_HEIGHT = 50.0   # pick raises a brick this far above where it stood
CARRY_HEIGHT = 100.0  # minimum base height of a brick in transit
NEAR_TOL = 1.0       # "within 1mm" for position and alignment checks
ON_MAX_GAP = 10.0    # "not more than 10mm above"
PRESS_RESIDUAL = 0.8

# Phase durations in ticks.  An action returns Running once per motion tick
# and reports its outcome on the following call.
PICK_PHASES = (("approach", 4), ("grasp", 2), ("lift", 4))
PLACE_PHASES = (("transit", 6), ("lower", 3), ("release", 1))
FORCE_PHASES = (("approach", 4), ("press", 2))

PLACED, COLLISION, TOPPLED = "placed", "collision-blocked", "toppled"
UNSUPPORTED = "unsupported"  # nothing to rest on at the release height

SOLVED = "solved-double-success"
ROOT_FAILURE = "root-failure"
TIMEOUT = "tick-timeout"
BUDGET = "budget-abort"


@dataclass
class Brick:
    id: str
    size: tuple[float, float, float]
    pose: tuple[float, float, float]
    com_offset_x: float = 0.0
    fitted: bool = False
    no_stack: bool = False

    @property
    def top(self) -> float:
        return self.pose[2] + self.size[2]

    def footprint(self, x: float | None = None, y: float | None = None):
        x = self.pose[0] if x is None else x
        y = self.pose[1] if y is None else y
        w, d = self.size[0] / 2, self.size[1] / 2
        return (x - w, x + w, y - d, y + d)


def overlaps(a, b) -> bool:
    return (min(a[1], b[1]) - max(a[0], b[0]) > EPS
            and min(a[3], b[3]) - max(a[2], b[2]) > EPS)


@dataclass(frozen=True)
class Rules:
    collision_corridor_check: bool = False
    balance_check: bool = False
    press_fit_residual: bool = False
    red_no_stack: bool = False


@dataclass(frozen=True)
class FitnessParams:
    delta: float = 0.4
    length_penalty: float = 0.1
    timeout_penalty: float = 10.0
    failure_penalty: float = 50.0
    hold_penalty: float = 0.0

    def __post_init__(self):
        for name in ("delta", "length_penalty", "timeout_penalty",
                     "failure_penalty", "hold_penalty"):
            if getattr(self, name) < 0:
                raise ValueError(f"fitness parameter {name} must be >= 0")


@dataclass(frozen=True)
class TaskSpec:
    name: str
    bricks: tuple[Brick, ...]
    goals: tuple[tuple[str, tuple[float, float, float]], ...]
    positions: dict[str, tuple[float, float, float]]
    behavior_pool: tuple[Behavior, ...]
    rules: Rules = Rules()
    fitness: FitnessParams = FitnessParams()
    allowed_positions: frozenset[str] | None = None
    max_ticks: int = 200
    max_action_ticks: int = 50
    eval_budget: int | None = None
    generations: dict[str, int] = field(default_factory=dict)
    seeds: tuple[int, ...] = ()
    planner: dict = field(default_factory=dict, compare=False)
    description: str = ""

    def brick(self, brick_id: str) -> Brick:
        for b in self.bricks:
            if b.id == brick_id:
                return b
        raise KeyError(brick_id)

    def generations_for(self, variant: str) -> int:
        g = self.generations
        if variant in g:
            return g[variant]
        if variant.startswith("baseline-boost") and "boosted" in g:
            return g["boosted"]
        if "unboosted" in g and not variant.startswith("baseline-boost"):
            return g["unboosted"]
        return g.get("default", 200)


@dataclass
class Active:
    behavior: Behavior
    duration: int
    events: dict
    finish: object
    elapsed: int = 0


@dataclass
class WorldState:
    bricks: dict[str, Brick]
    held: str | None = None
    gripper: tuple[float, float, float] = (0.0, 0.0, 150.0)
    tick_count: int = 0
    active: Active | None = None
    active_ticked: bool = False
    log: list = field(default_factory=list)

    @classmethod
    def from_task(cls, task: TaskSpec) -> "WorldState":
        return cls({b.id: copy.copy(b) for b in task.bricks})

    def snapshot(self) -> dict:
        """Plain-data view of the state, for comparisons and reports."""
        return {
            "bricks": {k: (b.pose, b.fitted) for k, b in sorted(self.bricks.items())},
            "held": self.held,
            "gripper": self.gripper,
            "tick_count": self.tick_count,
            "active": None if self.active is None else
            (self.active.behavior.name, self.active.elapsed),
        }


@dataclass
class EpisodeResult:
    final_world: WorldState
    ticks_used: int
    end_reason: str
    held_at_end: bool
    placements: list = field(default_factory=list)


# -- geometry helpers ----------------------------------------------------------

def distance(a, b) -> float:
    return math.dist(a, b)


def bricks_above(world: WorldState, brick: Brick) -> list[Brick]:
    """Non-held bricks resting over `brick`'s footprint, at any height."""
    fp = brick.footprint()
    return [o for o in world.bricks.values()
            if o is not brick and o.id != world.held
            and o.pose[2] > brick.pose[2] + EPS and overlaps(fp, o.footprint())]


def support_of(world: WorldState, brick: Brick) -> Brick | None:
    fp = brick.footprint()
    best = None
    for o in world.bricks.values():
        if o is brick or o.id == world.held:
            continue
        if abs(brick.pose[2] - o.top) <= PRESS_RESIDUAL + EPS and overlaps(fp, o.footprint()):
            if best is None or o.top > best.top:
                best = o
    return best


# -- conditions ----------------------------------------------------------------

def eval_condition(b: Behavior, world: WorldState, task: TaskSpec) -> Status:
    t, p = b.template, b.params
    if t == "picked {0}?":
        ok = world.held == p[0]
    elif t == "{0} at pos {1}?":
        ok = distance(world.bricks[p[0]].pose, task.positions[p[1]]) < NEAR_TOL
    elif t == "{0} on {1}?":
        a, s = world.bricks[p[0]], world.bricks[p[1]]
        gap = a.pose[2] - s.top
        ok = (abs(a.pose[0] - s.pose[0]) < NEAR_TOL and abs(a.pose[1] - s.pose[1]) < NEAR_TOL
              and a.pose[2] > s.pose[2] and -EPS <= gap <= ON_MAX_GAP)
    elif t == "{0} pressed?":
        ok = world.bricks[p[0]].fitted
    elif t == "gripper empty?":
        ok = world.held is None
    else:
        raise ConfigurationError(f"{b} is not a condition")
    return Status.SUCCESS if ok else Status.FAILURE


# -- placement -------------------------------------------------------------------

@dataclass(frozen=True)
class Placement:
    outcome: str
    pose: tuple[float, float, float] | None
    support: str | None = None


def place_outcome(world: WorldState, brick_id: str, target: tuple[str, str],
                  task: TaskSpec) -> Placement:
    """Resolve where a held brick ends up when released over `target`.

    `target` is ("brick", id) or ("pos", id).  Pure: the world is not
    modified.
    """
    rules = task.rules
    held = world.bricks[brick_id]
    if target[0] == "brick":
        base = world.bricks[target[1]]
        x, y = base.pose[0], base.pose[1]
        release = base.top
    else:
        x, y, release = task.positions[target[1]]
    fp = held.footprint(x, y)
    landing, support = 0.0, None
    for o in sorted(world.bricks.values(), key=lambda o: o.id):
        if o.id == brick_id or not overlaps(fp, o.footprint()):
            continue
        if o.top > landing + EPS or (
                support is not None and abs(o.top - landing) <= EPS
                and math.dist(o.pose[:2], (x, y)) < math.dist(support.pose[:2], (x, y)) - EPS):
            landing, support = o.top, o
    if rules.collision_corridor_check and landing > release + EPS:
        return Placement(COLLISION, None, support.id)
    if release > landing + EPS:
        # bricks are only let go at support height, never dropped
        return Placement(UNSUPPORTED, None, support.id if support else None)
    if support is None:
        return Placement(PLACED, (x, y, 0.0))
    if rules.red_no_stack and (support.no_stack or held.no_stack):
        return Placement(COLLISION, None, support.id)
    if rules.balance_check:
        sx0, sx1, sy0, sy1 = support.footprint()
        cx = x + held.com_offset_x
        if not (sx0 - EPS <= cx <= sx1 + EPS and sy0 - EPS <= y <= sy1 + EPS):
            return Placement(TOPPLED, (support.pose[0] + held.size[2], support.pose[1], 0.0),
                             support.id)
    z = landing + (PRESS_RESIDUAL if rules.press_fit_residual else 0.0)
    return Placement(PLACED, (x, y, z), support.id)


# -- actions -----------------------------------------------------------------------

class _Actions:
    """Builds the phase programs for action behaviors."""

    def __init__(self, task: TaskSpec):
        self.task = task

    def start(self, b: Behavior, world: WorldState):
        """Either an immediate Status or an Active program."""
        t, p = b.template, b.params
        if t == "pick {0}!":
            return self._pick(world, p[0])
        if t == "place on {0}!":
            return self._place(world, ("brick", p[0]), b)
        if t == "place at pos {0}!":
            return self._place(world, ("pos", p[0]), b)
        if t == "put {0} on {1}!":
            return self._put(world, p[0], ("brick", p[1]), b)
        if t == "put {0} at pos {1}!":
            return self._put(world, p[0], ("pos", p[1]), b)
        if t == "apply force {0}!":
            return self._force(world, p[0], b)
        raise ConfigurationError(f"{b} is not an action")

    @staticmethod
    def _events(phases, effects, offset=0):
        events, elapsed = {}, offset
        for name, duration in phases:
            elapsed += duration
            if name in effects:
                events[elapsed] = effects[name]
        return events, elapsed

    def _pick_effects(self, brick_id):
        def approach(world):
            world.gripper = world.bricks[brick_id].pose

        def grasp(world):
            world.held = brick_id
            world.bricks[brick_id].fitted = False

        def lift(world):
            brick = world.bricks[brick_id]
            x, y, z = brick.pose
            brick.pose = (x, y, z + LIFT_HEIGHT)
            world.gripper = brick.pose
        return {"approach": approach, "grasp": grasp, "lift": lift}

    def _pick_blocked(self, world, brick_id):
        return bool(bricks_above(world, world.bricks[brick_id]))

    def _pick(self, world, brick_id):
        if world.held == brick_id:
            return Status.SUCCESS
        if world.held is not None or self._pick_blocked(world, brick_id):
            return Status.FAILURE
        events, total = self._events(PICK_PHASES, self._pick_effects(brick_id))
        b = Behavior("pick {0}!", (brick_id,))
        return Active(b, total, events, lambda world: Status.SUCCESS)

    def _place_program(self, target, offset=0):
        task = self.task

        def transit(world):
            brick = world.bricks[world.held]
            if target[0] == "brick":
                x, y = world.bricks[target[1]].pose[:2]
            else:
                x, y = task.positions[target[1]][:2]
            brick.pose = (x, y, max(brick.pose[2], CARRY_HEIGHT))
            world.gripper = brick.pose

        def finish(world):
            brick_id = world.held
            if brick_id is None or (target[0] == "brick" and target[1] == brick_id):
                return Status.FAILURE
            result = place_outcome(world, brick_id, target, task)
            world.log.append({"tick": world.tick_count, "brick": brick_id,
                              "target": target, "outcome": result.outcome,
                              "pose": result.pose})
            if result.outcome in (COLLISION, UNSUPPORTED):
                return Status.FAILURE
            brick = world.bricks[brick_id]
            brick.pose = result.pose
            brick.fitted = False
            world.held = None
            return Status.SUCCESS

        events, total = self._events(PLACE_PHASES, {"transit": transit}, offset)
        return events, total, finish

    def _place(self, world, target, b):
        if world.held is None:
            return Status.FAILURE
        if target[0] == "brick" and target[1] == world.held:
            return Status.FAILURE
        events, total, finish = self._place_program(target)
        return Active(b, total, events, finish)

    def _put(self, world, brick_id, target, b):
        if target[0] == "brick":
            done = eval_condition(Behavior("{0} on {1}?", (brick_id, target[1])), world, self.task)
        else:
            done = eval_condition(Behavior("{0} at pos {1}?", (brick_id, target[1])),
                                  world, self.task)
        if done is Status.SUCCESS:
            return Status.SUCCESS
        if target == ("brick", brick_id):
            return Status.FAILURE
        if world.held == brick_id:
            events, total, finish = self._place_program(target)
            return Active(b, total, events, finish)
        if world.held is not None or self._pick_blocked(world, brick_id):
            return Status.FAILURE
        events, offset = self._events(PICK_PHASES, self._pick_effects(brick_id))
        place_events, total, finish = self._place_program(target, offset)
        events.update(place_events)
        return Active(b, total, events, finish)

    def _force(self, world, brick_id, b):
        if world.held is not None:
            return Status.FAILURE

        def approach(world):
            world.gripper = world.bricks[brick_id].pose

        def finish(world):
            brick = world.bricks[brick_id]
            support = support_of(world, brick)
            if support is not None:
                drop = brick.pose[2] - support.top
                for o in [brick] + bricks_above(world, brick):
                    x, y, z = o.pose
                    o.pose = (x, y, z - drop)
                brick.fitted = True
            return Status.SUCCESS

        events, total = self._events(FORCE_PHASES, {"approach": approach})
        return Active(b, total, events, finish)


def step_action(b: Behavior, world: WorldState, task: TaskSpec,
                actions: _Actions | None = None) -> Status:
    """Advance action `b` by one tick.

    Starting a motion halts any other running action.  An action that
    finishes without motion (immediate Success or Failure) leaves the
    running one alone; it is halted later only if the root tick ends without
    re-ticking it.
    """
    if world.active is None or world.active.behavior != b:
        started = (actions or _Actions(task)).start(b, world)
        if isinstance(started, Status):
            return started
        started.behavior = b
        world.active = started
    act = world.active
    world.active_ticked = True
    if act.elapsed < act.duration:
        act.elapsed += 1
        if act.elapsed > task.max_action_ticks:
            world.active = None
            return Status.FAILURE
        effect = act.events.get(act.elapsed)
        if effect is not None:
            effect(world)
        return Status.RUNNING
    world.active = None
    return act.finish(world)


# -- episodes --------------------------------------------------------------------

def check_ids(tree: Node, task: TaskSpec) -> None:
    ids = {b.id for b in task.bricks}
    for _, node in walk(tree):
        if node.kind != LEAF:
            continue
        b = node.behavior
        for kind, value in zip(b.param_kinds, b.params):
            if kind == "b" and value not in ids:
                raise ConfigurationError(f"{b}: unknown brick {value!r}")
            if kind == "p" and value not in task.positions:
                raise ConfigurationError(f"{b}: unknown position {value!r}")


class _BudgetExceeded(Exception):
    pass


def run_episode(tree: Node, task: TaskSpec) -> EpisodeResult:
    """Tick `tree` from the task's start state until the episode ends."""
    check_ids(tree, task)
    world = WorldState.from_task(task)
    actions = _Actions(task)
    budget = task.eval_budget
    calls = 0

    def registry(b: Behavior, w: WorldState) -> Status:
        nonlocal calls
        calls += 1
        if budget is not None and calls > budget:
            raise _BudgetExceeded
        if b.is_condition:
            return eval_condition(b, w, task)
        return step_action(b, w, task, actions)

    successes = 0
    reason = TIMEOUT
    while world.tick_count < task.max_ticks:
        world.active_ticked = False
        try:
            status = tick(tree, world, registry)
        except _BudgetExceeded:
            reason = BUDGET
            break
        world.tick_count += 1
        if world.active is not None and not world.active_ticked:
            world.active = None
        if status is Status.FAILURE:
            reason = ROOT_FAILURE
            break
        if status is Status.SUCCESS:
            successes += 1
            if successes == 2:
                reason = SOLVED
                break
        else:
            successes = 0
    return EpisodeResult(world, world.tick_count, reason, world.held is not None,
                         list(world.log))


def goal_distance_terms(world: WorldState, task: TaskSpec) -> list[float]:
    delta = task.fitness.delta
    return [max(0.0, distance(world.bricks[b].pose, g) - delta) for b, g in task.goals]


def compute_fitness(result: EpisodeResult, tree: Node, task: TaskSpec) -> float:
    fp = task.fitness
    fitness = -sum(goal_distance_terms(result.final_world, task))
    fitness -= fp.length_penalty * len(tree)
    if result.end_reason == TIMEOUT:
        fitness -= fp.timeout_penalty
    if result.end_reason == ROOT_FAILURE:
        fitness -= fp.failure_penalty
    if fp.hold_penalty > 0 and result.held_at_end:
        fitness -= fp.hold_penalty
    return fitness


def evaluate(tree: Node, task: TaskSpec) -> float:
    return compute_fitness(run_episode(tree, task), tree, task)
