"""
Constraint expression AST.

Positions are character offsets into the source text and do not take
part in equality, so re-parsed pretty-printed text compares equal.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import FrozenSet, Tuple, Union


class DslType(str, Enum):
    SCALAR = "scalar"
    VEC = "vec"
    ROT = "rot"
    POSE = "pose"
    REP = "rep"
    AXIS = "axis"
    STRING = "string"


@dataclass(frozen=True)
class Number:
    value: float
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class String:
    value: str
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Var:
    name: str
    pos: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    name: str
    args: Tuple["Node", ...]
    pos: int = field(default=0, compare=False)


Node = Union[Number, String, Var, Call]


@dataclass(frozen=True)
class ConstraintExpr:
    """A parsed, type-checked cost expression."""

    root: Node
    text: str
    result_type: DslType
    rep_names: FrozenSet[str]


def rep_references(node: Node) -> FrozenSet[str]:
    if isinstance(node, Call):
        if node.name == "rep" and len(node.args) == 1 and isinstance(node.args[0], String):
            return frozenset({node.args[0].value})
        names = frozenset()
        for a in node.args:
            names |= rep_references(a)
        return names
    return frozenset()


def to_text(node: Node) -> str:
    """Canonical source form."""
    if isinstance(node, Number):
        return repr(float(node.value))
    if isinstance(node, String):
        escaped = node.value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(node, Var):
        return node.name
    return f"{node.name}({', '.join(to_text(a) for a in node.args)})"

