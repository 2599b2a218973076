import json

import pytest

from btgp.tasks import SHIPPED, TaskLoadError, load_task, task_from_dict


@pytest.mark.parametrize("name,pool", [("task1", 22), ("task2", 35), ("task3", 23),
                                       ("task4", 27)])
def test_shipped_pool_sizes(name, pool):
    task = load_task(name)
    assert len(task.behavior_pool) == pool
    assert len(set(task.behavior_pool)) == pool


def test_task1_layout():
    task = load_task("task1")
    assert len(task.bricks) == 3
    assert [z for _, (_, _, z) in task.goals] == pytest.approx([0.0, 19.2, 38.4])
    assert task.rules.press_fit_residual
    assert not any("put" in b.template for b in task.behavior_pool)


def test_task2_and_3_rules():
    t2, t3 = load_task("task2"), load_task("task3")
    assert t2.rules.collision_corridor_check
    assert not any("put" in b.template for b in t2.behavior_pool)
    assert t3.rules.balance_check
    assert t3.fitness.hold_penalty == 100
    assert any("put" in b.template for b in t3.behavior_pool)


def test_task4_layout():
    task = load_task("task4")
    assert task.allowed_positions == frozenset("ABCD")
    assert task.rules.red_no_stack
    a, e = task.positions["A"], task.positions["E"]
    assert e[:2] == a[:2] and e[2] == pytest.approx(19.2)


def test_generation_defaults():
    assert load_task("task1").generations_for("baseline") == 200
    t2 = load_task("task2")
    assert t2.generations_for("scratch") == 1000
    assert t2.generations_for("baseline") == 1000
    assert t2.generations_for("baseline-boost-all") == 500
    assert t2.generations_for("baseline-boost-crossover") == 500
    assert load_task("task3").generations_for("scratch") == 800
    assert load_task("task4").generations_for("scratch") == 300


def _doc():
    return json.loads(json.dumps({
        "name": "t",
        "bricks": [{"id": "a", "size": [10, 10, 10], "pose": [0, 0]}],
        "positions": {"P": [5, 5]},
        "goals": [{"brick": "a", "position": "P"}],
        "behavior_pool": ["pick a!", "put a at pos P!"],
    }))


def test_minimal_doc_loads():
    task = task_from_dict(_doc())
    assert task.goals == (("a", (5.0, 5.0, 0.0)),)


@pytest.mark.parametrize("edit,message", [
    (lambda d: d["goals"].append({"brick": "zz", "pose": [0, 0, 0]}), "missing brick"),
    (lambda d: d["behavior_pool"].append("pick zz!"), "missing brick"),
    (lambda d: d["behavior_pool"].append("pick a!"), "duplicate"),
    (lambda d: d.update(pool_size=5), "expected 5"),
    (lambda d: d.pop("goals"), "missing field"),
    (lambda d: d["behavior_pool"].append("teleport a!"), "not a behavior"),
    (lambda d: d.update(allowed_positions=[]), "outside allowed_positions"),
])
def test_load_errors(edit, message):
    doc = _doc()
    edit(doc)
    with pytest.raises(TaskLoadError, match=message):
        task_from_dict(doc)


def test_load_by_path(tmp_path):
    path = tmp_path / "mine.json"
    path.write_text(json.dumps(_doc()))
    assert load_task(path).name == "t"
    with pytest.raises(TaskLoadError):
        load_task(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(TaskLoadError):
        load_task(bad)


def test_all_shipped_load():
    for name in SHIPPED:
        assert load_task(name).name == name
