"""
Constraint expression parser and type checker.

Grammar (see docs/constraint_grammar.md):

    expr   := call | number | string | name
    call   := name "(" [expr ("," expr)*] ")"
"""
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Tuple

import pyparsing as pp

from dsl.ast_nodes import Call, ConstraintExpr, DslType, Node, Number, String, Var, rep_references
from utils.errors import DslBindingError, DslSyntaxError, DslTypeError

S, V, R, P = DslType.SCALAR, DslType.VEC, DslType.ROT, DslType.POSE
REP, AXIS, STR = DslType.REP, DslType.AXIS, DslType.STRING


@dataclass(frozen=True)
class Signature:
    params: Tuple[FrozenSet[DslType], ...]
    result: DslType
    variadic: bool = False

    def expand(self, n: int) -> Optional[Tuple[FrozenSet[DslType], ...]]:
        if self.variadic:
            return self.params * n if n >= 2 else None
        return self.params if n == len(self.params) else None


def _sig(params, result, variadic=False) -> Signature:
    return Signature(tuple(frozenset(p) if isinstance(p, (set, frozenset)) else frozenset({p}) for p in params),
                     result, variadic)


FUNCTIONS: Dict[str, List[Signature]] = {
    "add": [_sig([S], S, True), _sig([V], V, True)],
    "sub": [_sig([S, S], S), _sig([V, V], V)],
    "mul": [_sig([S, S], S), _sig([S, V], V), _sig([V, S], V)],
    "max": [_sig([S], S, True)],
    "min": [_sig([S], S, True)],
    "abs": [_sig([S], S)],
    "norm": [_sig([V], S)],
    "dot": [_sig([V, V], S)],
    "cross": [_sig([V, V], V)],
    "angle_between": [_sig([V, V], S)],
    "geodesic": [_sig([R, R], S)],
    "point_of": [_sig([REP], V)],
    "axis_of": [_sig([{REP, P, R}, AXIS], V)],
    "translation_of": [_sig([{REP, P}], V)],
    "rotation_of": [_sig([{REP, P}], R)],
    "direction_of": [_sig([REP], V)],
    "vec": [_sig([S, S, S], V)],
    "rep": [_sig([STR], REP)],
}

VARIABLES: Dict[str, DslType] = {
    "ee_pos": V,
    "ee_rot": R,
    "ee_pose": P,
    "x": AXIS,
    "y": AXIS,
    "z": AXIS,
}


def _build_grammar() -> pp.ParserElement:
    lpar, rpar = pp.Suppress("("), pp.Suppress(")")
    number = pp.Regex(r"[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?").set_name("number")
    number.set_parse_action(lambda s, loc, t: Number(float(t[0]), loc))
    string = pp.QuotedString('"', esc_char="\\").set_name("string")
    string.set_parse_action(lambda s, loc, t: String(t[0], loc))
    name = pp.Word(pp.alphas + "_", pp.alphanums + "_").set_name("name")
    variable = name.copy().set_parse_action(lambda s, loc, t: Var(t[0], loc))

    expr = pp.Forward().set_name("expression")
    args = pp.Group(pp.Optional(pp.DelimitedList(expr)))
    call = (name + lpar + args + rpar).set_parse_action(lambda s, loc, t: Call(t[0], tuple(t[1]), loc))
    expr <<= call | number | string | variable
    return expr


GRAMMAR = _build_grammar()


def parse_expression(text: str) -> Node:
    """Parse without type checking."""
    if not text or not text.strip():
        raise DslSyntaxError("empty expression", 0)
    try:
        return GRAMMAR.parse_string(text, parse_all=True)[0]
    except pp.ParseBaseException as e:
        raise DslSyntaxError(f"syntax error: {e.msg}", e.loc) from None


def _type_names(types: Iterable[DslType]) -> str:
    return " or ".join(sorted(t.value for t in types))


def check_types(node: Node, declared: Optional[FrozenSet[str]] = None) -> DslType:
    """Infer the type of ``node``; errors carry the offending position."""
    if isinstance(node, Number):
        return S
    if isinstance(node, String):
        return STR
    if isinstance(node, Var):
        t = VARIABLES.get(node.name)
        if t is None:
            raise DslTypeError(f"unknown name '{node.name}'", node.pos)
        return t

    sigs = FUNCTIONS.get(node.name)
    if sigs is None:
        raise DslTypeError(f"unknown function '{node.name}'", node.pos)
    arg_types = [check_types(a, declared) for a in node.args]
    n = len(arg_types)
    candidates = [(s, s.expand(n)) for s in sigs if s.expand(n) is not None]
    if not candidates:
        raise DslTypeError(f"{node.name} does not take {n} argument{'s' if n != 1 else ''}", node.pos)
    for i, t in enumerate(arg_types):
        remaining = [(s, params) for s, params in candidates if t in params[i]]
        if not remaining:
            expected = set().union(*(params[i] for _, params in candidates))
            raise DslTypeError(
                f"argument {i + 1} of {node.name} must be {_type_names(expected)}, got {t.value}",
                node.args[i].pos,
            )
        candidates = remaining

    if node.name == "rep":
        name = node.args[0]
        if not isinstance(name, String):
            raise DslTypeError("rep() takes a string literal", name.pos)
        if declared is not None and name.value not in declared:
            raise DslBindingError(f"unbound representation '{name.value}'", name.pos)
    return candidates[0][0].result


def parse_constraint(text: str, declared_bindings: Optional[Iterable[str]] = None) -> ConstraintExpr:
    """Parse and type-check a cost expression; it must evaluate to a scalar."""
    root = parse_expression(text)
    declared = frozenset(declared_bindings) if declared_bindings is not None else None
    result = check_types(root, declared)
    if result != S:
        raise DslTypeError(f"a constraint must evaluate to a scalar, got {result.value}", getattr(root, "pos", 0))
    return ConstraintExpr(root=root, text=text, result_type=result, rep_names=rep_references(root))
