"""Task configuration files: loading and checking.

The four shipped tasks live in the package's configs directory as ``task1.json`` ...
``task4.json``; `load_task` also accepts a path to any file using the same
schema.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .bt import Behavior, BehaviorError
from .world import Brick, FitnessParams, Rules, TaskSpec

SHIPPED = ("task1", "task2", "task3", "task4")


class TaskLoadError(ValueError):
    pass


def _point(value, where) -> tuple[float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) not in (2, 3):
        raise TaskLoadError(f"{where}: expected [x, y] or [x, y, z], got {value!r}")
    x, y, *z = (float(v) for v in value)
    return (x, y, z[0] if z else 0.0)


def _behavior(text, where) -> Behavior:
    try:
        return Behavior.parse(text)
    except (BehaviorError, TypeError) as exc:
        raise TaskLoadError(f"{where}: {exc}") from None


def task_from_dict(doc: dict, source: str = "<dict>") -> TaskSpec:
    try:
        name = doc["name"]
        types = doc.get("brick_types", {})
        bricks = []
        for i, spec in enumerate(doc["bricks"]):
            size = spec.get("size") or types.get(spec.get("type"))
            if size is None or len(size) != 3:
                raise TaskLoadError(f"{source}: brick {i} has no usable size/type")
            bricks.append(Brick(
                id=spec["id"], size=tuple(float(v) for v in size),
                pose=_point(spec["pose"], f"{source}: brick {spec['id']}"),
                com_offset_x=float(spec.get("com_offset_x", 0.0)),
                no_stack=bool(spec.get("no_stack", False))))
        positions = {k: _point(v, f"{source}: position {k}")
                     for k, v in doc.get("positions", {}).items()}
        ids = [b.id for b in bricks]
        if len(set(ids)) != len(ids):
            raise TaskLoadError(f"{source}: duplicate brick ids")
        goals = []
        for g in doc["goals"]:
            if g["brick"] not in ids:
                raise TaskLoadError(f"{source}: goal references missing brick {g['brick']!r}")
            if "position" in g:
                if g["position"] not in positions:
                    raise TaskLoadError(
                        f"{source}: goal references missing position {g['position']!r}")
                goals.append((g["brick"], positions[g["position"]]))
            else:
                goals.append((g["brick"], _point(g["pose"], f"{source}: goal {g['brick']}")))
        if not goals:
            raise TaskLoadError(f"{source}: no goals")
        pool = tuple(_behavior(t, f"{source}: behavior_pool")
                     for t in doc["behavior_pool"])
        allowed = doc.get("allowed_positions")
        episode = doc.get("episode", {})
        task = TaskSpec(
            name=name,
            bricks=tuple(bricks),
            goals=tuple(goals),
            positions=positions,
            behavior_pool=pool,
            rules=Rules(**doc.get("rules", {})),
            fitness=FitnessParams(**doc.get("fitness", {})),
            allowed_positions=None if allowed is None else frozenset(allowed),
            max_ticks=int(episode.get("max_ticks", 200)),
            max_action_ticks=int(episode.get("max_action_ticks", 50)),
            eval_budget=episode.get("eval_budget"),
            generations=dict(doc.get("generations", {})),
            seeds=tuple(doc.get("seeds", ())),
            planner=doc.get("planner", {}),
            description=doc.get("description", ""),
        )
    except KeyError as exc:
        raise TaskLoadError(f"{source}: missing field {exc}") from None
    except TypeError as exc:
        raise TaskLoadError(f"{source}: {exc}") from None
    check_task(task, doc.get("pool_size"), source)
    return task


def check_task(task: TaskSpec, pool_size: int | None = None, source: str = "") -> None:
    ids = {b.id for b in task.bricks}
    if len(set(task.behavior_pool)) != len(task.behavior_pool):
        raise TaskLoadError(f"{source}: duplicate behaviors in pool")
    if pool_size is not None and len(task.behavior_pool) != pool_size:
        raise TaskLoadError(
            f"{source}: pool has {len(task.behavior_pool)} behaviors, expected {pool_size}")
    for b in task.behavior_pool:
        for kind, value in zip(b.param_kinds, b.params):
            if kind == "b" and value not in ids:
                raise TaskLoadError(f"{source}: {b} references missing brick {value!r}")
            if kind == "p" and value not in task.positions:
                raise TaskLoadError(f"{source}: {b} references missing position {value!r}")
            if (kind == "p" and task.allowed_positions is not None
                    and value not in task.allowed_positions
                    and task.positions[value][2] == 0.0):
                raise TaskLoadError(f"{source}: {b} uses table position {value!r} "
                                    "outside allowed_positions")
    for b in task.bricks:
        if b.pose[2] < 0:
            raise TaskLoadError(f"{source}: brick {b.id} below the table")
    if task.max_ticks <= 0 or task.max_action_ticks <= 0:
        raise TaskLoadError(f"{source}: episode limits must be positive")


def load_task(name_or_path: str | Path) -> TaskSpec:
    """Load a shipped task by name ('task1') or a task file by path."""
    if str(name_or_path) in SHIPPED:
        text = resources.files("btgp").joinpath("configs").joinpath(f"{name_or_path}.json").read_text()
        source = f"{name_or_path}.json"
    else:
        path = Path(name_or_path)
        if not path.is_file():
            raise TaskLoadError(f"no such task {str(name_or_path)!r}")
        text, source = path.read_text(), str(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TaskLoadError(f"{source}: {exc}") from None
    return task_from_dict(doc, source)
