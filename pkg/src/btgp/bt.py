"""Behavior tree representation, validation, text format and tick engine.

Trees are immutable: a tree is its root :class:`Node`, and every edit
produces a new spine of nodes while sharing untouched subtrees.  Nodes are
addressed by *paths*, the tuple of child indices from the root.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator

FALLBACK = "fallback"
SEQUENCE = "sequence"
LEAF = "leaf"
CONTROL_KINDS = (FALLBACK, SEQUENCE)


class Status(Enum):
    SUCCESS = "Success"
    FAILURE = "Failure"
    RUNNING = "Running"


# template -> (kind, parameter kinds).  'b' is a brick id, 'p' a position id.
TEMPLATES = {
    "picked {0}?": ("condition", "b"),
    "{0} at pos {1}?": ("condition", "bp"),
    "{0} on {1}?": ("condition", "bb"),
    "{0} pressed?": ("condition", "b"),
    "gripper empty?": ("condition", ""),
    "pick {0}!": ("action", "b"),
    "place on {0}!": ("action", "b"),
    "place at pos {0}!": ("action", "p"),
    "put {0} on {1}!": ("action", "bb"),
    "put {0} at pos {1}!": ("action", "bp"),
    "apply force {0}!": ("action", "b"),
}

RESERVED_WORDS = {"pos", "on", "at", "put", "pick", "place", "apply", "force",
                  "picked", "pressed", "gripper", "empty"}

_IDENT = r"([A-Za-z0-9_]+)"


def _template_regex(template: str) -> re.Pattern:
    parts = re.split(r"(\{\d\})", template)
    body = "".join(_IDENT if re.fullmatch(r"\{\d\}", p) else re.escape(p) for p in parts)
    return re.compile("^" + body + "$")


# "at pos" templates must be tried before the generic "on" ones.
_MATCHERS = sorted(((t, _template_regex(t)) for t in TEMPLATES),
                   key=lambda item: ("at pos" not in item[0], item[0]))


class BehaviorError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Behavior:
    """A condition or action leaf: a template instantiated with ids."""

    template: str
    params: tuple[str, ...] = ()

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise BehaviorError(f"unknown behavior template {self.template!r}")
        arity = len(TEMPLATES[self.template][1])
        if len(self.params) != arity:
            raise BehaviorError(
                f"template {self.template!r} takes {arity} params, got {len(self.params)}")

    @property
    def kind(self) -> str:
        return TEMPLATES[self.template][0]

    @property
    def is_condition(self) -> bool:
        return self.kind == "condition"

    @property
    def param_kinds(self) -> str:
        return TEMPLATES[self.template][1]

    @property
    def name(self) -> str:
        return self.template.format(*self.params)

    def __str__(self) -> str:
        return self.name

    @classmethod
    def parse(cls, text: str) -> "Behavior":
        for template, regex in _MATCHERS:
            m = regex.match(text)
            if m and not (set(m.groups()) & RESERVED_WORDS):
                return cls(template, m.groups())
        raise BehaviorError(f"not a behavior: {text!r}")


@dataclass(frozen=True)
class Node:
    kind: str
    children: tuple["Node", ...] = ()
    behavior: Behavior | None = None
    _size: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_size", 1 + sum(c._size for c in self.children))

    @property
    def is_control(self) -> bool:
        return self.kind != LEAF

    def __len__(self) -> int:
        return self._size

    def __str__(self) -> str:
        return serialize(self)


def leaf(behavior: Behavior | str) -> Node:
    if isinstance(behavior, str):
        behavior = Behavior.parse(behavior)
    return Node(LEAF, (), behavior)


def _wrap(children) -> tuple[Node, ...]:
    return tuple(c if isinstance(c, Node) else leaf(c) for c in children)


def fallback(*children) -> Node:
    return Node(FALLBACK, _wrap(children))


def sequence(*children) -> Node:
    return Node(SEQUENCE, _wrap(children))


# -- traversal and editing ---------------------------------------------------

Path = tuple[int, ...]


def walk(tree: Node, path: Path = ()) -> Iterator[tuple[Path, Node]]:
    """Preorder (path, node) pairs."""
    yield path, tree
    for i, child in enumerate(tree.children):
        yield from walk(child, path + (i,))


def get(tree: Node, path: Path) -> Node:
    for i in path:
        tree = tree.children[i]
    return tree


def replace(tree: Node, path: Path, new: Node | None) -> Node | None:
    """Return a copy of `tree` with the node at `path` replaced.

    ``new=None`` deletes the node; a control node left without children is
    deleted as well, recursively.  Deleting the root returns None.
    """
    if not path:
        return new
    i = path[0]
    sub = replace(tree.children[i], path[1:], new)
    if sub is None:
        children = tree.children[:i] + tree.children[i + 1:]
        if not children:
            return None
    else:
        children = tree.children[:i] + (sub,) + tree.children[i + 1:]
    return Node(tree.kind, children, tree.behavior)


def insert(tree: Node, parent: Path, index: int, new: Node) -> Node:
    """Return a copy of `tree` with `new` inserted as child `index` of `parent`."""
    p = get(tree, parent)
    children = p.children[:index] + (new,) + p.children[index:]
    return replace(tree, parent, Node(p.kind, children, p.behavior))


def node_count(tree: Node) -> int:
    return len(tree)


def behaviors(tree: Node) -> list[Behavior]:
    return [n.behavior for _, n in walk(tree) if n.kind == LEAF]


# -- validation --------------------------------------------------------------

def validate(tree: Node) -> list[str]:
    """Every constraint violation in `tree`; an empty list means valid."""
    problems = []
    if tree.kind == LEAF:
        problems.append("root: root must be a control node")
    for path, node in walk(tree):
        where = "/".join(map(str, path)) or "root"
        if node.kind == LEAF:
            if node.children:
                problems.append(f"{where}: leaf with children")
            if node.behavior is None:
                problems.append(f"{where}: leaf without behavior")
            continue
        if node.kind not in CONTROL_KINDS:
            problems.append(f"{where}: unknown node kind {node.kind!r}")
        if not node.children:
            problems.append(f"{where}: control node without children")
        for i, child in enumerate(node.children):
            if child.kind == node.kind:
                problems.append(f"{where}/{i}: same-kind parent")
            if (i and child.kind == LEAF and child.behavior.is_condition
                    and node.children[i - 1] == child):
                problems.append(f"{where}/{i}: adjacent identical conditions")
    return problems


def is_valid(tree: Node) -> bool:
    """Fast boolean form of ``not validate(tree)`` for operator loops."""
    if tree.kind == LEAF:
        return False
    stack = [tree]
    while stack:
        node = stack.pop()
        children = node.children
        if not children:
            return False
        prev = None
        for child in children:
            if child.kind == node.kind:
                return False
            if child.kind == LEAF:
                if child.children or child.behavior is None:
                    return False
                if prev is not None and child == prev and child.behavior.is_condition:
                    return False
            else:
                stack.append(child)
            prev = child
    return True


# -- canonical text ------------------------------------------------------------

def serialize(tree: Node) -> str:
    if tree.kind == LEAF:
        return '"' + tree.behavior.name + '"'
    tag = "f" if tree.kind == FALLBACK else "s"
    return tag + "(" + ",".join(serialize(c) for c in tree.children) + ")"


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


def parse(text: str) -> Node:
    """Parse canonical tree text.  Only structural rules are enforced here;
    run :func:`validate` for the GP constraints."""
    pos = 0

    def node() -> Node:
        nonlocal pos
        if text.startswith('"', pos):
            end = text.find('"', pos + 1)
            if end < 0:
                raise ParseError("unterminated leaf", pos)
            try:
                b = Behavior.parse(text[pos + 1:end])
            except BehaviorError as exc:
                raise ParseError(str(exc), pos + 1) from None
            pos = end + 1
            return Node(LEAF, (), b)
        if text.startswith(("f(", "s("), pos):
            kind = FALLBACK if text[pos] == "f" else SEQUENCE
            pos += 2
            children = [node()]
            while text.startswith(",", pos):
                pos += 1
                children.append(node())
            if not text.startswith(")", pos):
                raise ParseError("expected ',' or ')'", pos)
            pos += 1
            return Node(kind, tuple(children))
        raise ParseError("expected 'f(', 's(' or a quoted leaf", pos)

    tree = node()
    if pos != len(text):
        raise ParseError("trailing text", pos)
    return tree


def structural_hash(tree: Node) -> str:
    return hashlib.sha256(serialize(tree).encode()).hexdigest()


def to_dot(tree: Node, name: str = "bt") -> str:
    """Graphviz DOT text; edges carry ordinal labels for child order."""
    lines = [f"digraph {name} {{", "  node [fontname=Helvetica];"]
    ids = {}
    for n, (path, node) in enumerate(walk(tree)):
        ids[path] = f"n{n}"
        if node.kind == LEAF:
            shape = "ellipse" if node.behavior.is_condition else "box"
            label = node.behavior.name.replace('"', r'\"')
        else:
            shape = "octagon" if node.kind == FALLBACK else "rect"
            label = "?" if node.kind == FALLBACK else "→"
        lines.append(f'  n{n} [label="{label}", shape={shape}];')
    for path, node in walk(tree):
        for i in range(len(node.children)):
            lines.append(f'  {ids[path]} -> {ids[path + (i,)]} [label="{i}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- ticking -----------------------------------------------------------------

class ConfigurationError(RuntimeError):
    """A tree references a behavior the registry cannot execute."""


def tick(tree: Node, world, registry: Callable[[Behavior, object], Status]) -> Status:
    """Tick `tree` once, memory-less, delegating leaves to `registry`.

    `registry(behavior, world)` returns a Status; it raises
    ConfigurationError for behaviors it does not know.
    """
    if tree.kind == LEAF:
        status = registry(tree.behavior, world)
        if status is Status.RUNNING and tree.behavior.is_condition:
            raise AssertionError(f"condition {tree.behavior} returned Running")
        return status
    if tree.kind == SEQUENCE:
        for child in tree.children:
            status = tick(child, world, registry)
            if status is not Status.SUCCESS:
                return status
        return Status.SUCCESS
    for child in tree.children:
        status = tick(child, world, registry)
        if status is not Status.FAILURE:
            return status
    return Status.FAILURE


_DOT_NODE = re.compile(r'^\s*(n\d+) \[label="((?:[^"\\]|\\.)*)", shape=\w+\];$')
_DOT_EDGE = re.compile(r'^\s*(n\d+) -> (n\d+) \[label="(\d+)"\];$')


def from_dot(text: str) -> Node:
    """Read back a tree written by :func:`to_dot`."""
    labels, edges = {}, {}
    for line in text.splitlines():
        m = _DOT_NODE.match(line)
        if m:
            labels[m.group(1)] = m.group(2).replace(r'\"', '"')
            continue
        m = _DOT_EDGE.match(line)
        if m:
            edges.setdefault(m.group(1), []).append((int(m.group(3)), m.group(2)))
    if "n0" not in labels:
        raise ParseError("no root node n0 in DOT text", 0)

    def build(name: str) -> Node:
        label = labels[name]
        kids = [build(child) for _, child in sorted(edges.get(name, ()))]
        if label in ("?", "→"):
            return Node(FALLBACK if label == "?" else SEQUENCE, tuple(kids))
        if kids:
            raise ParseError(f"leaf {name} has children", 0)
        try:
            return Node(LEAF, (), Behavior.parse(label))
        except BehaviorError as exc:
            raise ParseError(str(exc), 0) from None
    return build("n0")


def read_tree(text: str) -> Node:
    """Canonical text or DOT, whichever `text` is."""
    text = text.strip()
    if text.startswith("digraph"):
        return from_dot(text)
    return parse(text)
