"""Expression AST, static types and the numeric evaluator for concept files."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Union

import numpy as np

from .geometry import RigidTransform, rotation_about

SCALAR, VEC3, POSE = "scalar", "vec3", "pose"


class EvalError(Exception):
    pass


class MissingBinding(EvalError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DomainError(EvalError, ValueError):
    pass


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Sym:
    name: str


@dataclass(frozen=True)
class Vec:
    items: tuple


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple


Expr = Union[Num, Sym, Vec, Neg, BinOp, Call]
Value = Union[float, np.ndarray, RigidTransform]

CONSTANTS = {"pi": (SCALAR, math.pi), "identity": (POSE, RigidTransform())}


def _normalize(v):
    n = float(np.linalg.norm(v))
    if not n > 1e-12:
        raise DomainError("normalize of a zero-length vector")
    return v / n


def _sqrt(x):
    if x < 0:
        raise DomainError(f"sqrt of negative value {x!r}")
    return math.sqrt(x)


def _rot(axis_v, angle):
    if not np.linalg.norm(axis_v) > 1e-12:
        raise DomainError("rotation about a zero-length axis")
    return RigidTransform(rotation_about(axis_v, angle))


def _frame(origin, z_axis, x_axis):
    z = _normalize(np.asarray(z_axis, dtype=float))
    x = np.asarray(x_axis, dtype=float) - np.dot(x_axis, z) * z
    n = float(np.linalg.norm(x))
    if not n > 1e-9:
        raise DomainError("frame axes are parallel")
    x = x / n
    y = np.cross(z, x)
    return RigidTransform(np.column_stack([x, y, z]), origin)


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return RigidTransform(np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]))


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return RigidTransform(np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]))


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return RigidTransform(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))


# name -> (argument types, result type, implementation)
FUNCTIONS: dict[str, tuple[tuple, str, Callable]] = {
    "sin": ((SCALAR,), SCALAR, math.sin),
    "cos": ((SCALAR,), SCALAR, math.cos),
    "sqrt": ((SCALAR,), SCALAR, _sqrt),
    "abs": ((SCALAR,), SCALAR, abs),
    "deg": ((SCALAR,), SCALAR, math.radians),
    "min": ((SCALAR, SCALAR), SCALAR, min),
    "max": ((SCALAR, SCALAR), SCALAR, max),
    "dot": ((VEC3, VEC3), SCALAR, lambda a, b: float(np.dot(a, b))),
    "cross": ((VEC3, VEC3), VEC3, np.cross),
    "norm": ((VEC3,), SCALAR, lambda v: float(np.linalg.norm(v))),
    "normalize": ((VEC3,), VEC3, _normalize),
    "rot_x": ((SCALAR,), POSE, _rx),
    "rot_y": ((SCALAR,), POSE, _ry),
    "rot_z": ((SCALAR,), POSE, _rz),
    "rot": ((VEC3, SCALAR), POSE, _rot),
    "translate": ((VEC3,), POSE, lambda v: RigidTransform(np.eye(3), v)),
    "frame": ((VEC3, VEC3, VEC3), POSE, _frame),
    "inv": ((POSE,), POSE, lambda p: p.inverse()),
    "origin": ((POSE,), VEC3, lambda p: p.t.copy()),
    "xaxis": ((POSE,), VEC3, lambda p: p.R[:, 0].copy()),
    "yaxis": ((POSE,), VEC3, lambda p: p.R[:, 1].copy()),
    "zaxis": ((POSE,), VEC3, lambda p: p.R[:, 2].copy()),
}

# (op, left type, right type) -> result type
BINARY_TYPES = {
    ("+", SCALAR, SCALAR): SCALAR,
    ("-", SCALAR, SCALAR): SCALAR,
    ("+", VEC3, VEC3): VEC3,
    ("-", VEC3, VEC3): VEC3,
    ("*", SCALAR, SCALAR): SCALAR,
    ("*", SCALAR, VEC3): VEC3,
    ("*", VEC3, SCALAR): VEC3,
    ("*", POSE, POSE): POSE,
    ("*", POSE, VEC3): VEC3,
    ("/", SCALAR, SCALAR): SCALAR,
    ("/", VEC3, SCALAR): VEC3,
}

PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


def free_symbols(expr: Expr) -> set:
    if isinstance(expr, Sym):
        return set() if expr.name in CONSTANTS else {expr.name}
    if isinstance(expr, Num):
        return set()
    if isinstance(expr, Neg):
        return free_symbols(expr.operand)
    if isinstance(expr, BinOp):
        return free_symbols(expr.left) | free_symbols(expr.right)
    children = expr.items if isinstance(expr, Vec) else expr.args
    out = set()
    for c in children:
        out |= free_symbols(c)
    return out


def infer_type(expr: Expr, env: Mapping[str, str]) -> str:
    """Static type of ``expr`` given symbol types; raises TypeError or KeyError."""
    if isinstance(expr, Num):
        return SCALAR
    if isinstance(expr, Sym):
        if expr.name in CONSTANTS:
            return CONSTANTS[expr.name][0]
        return env[expr.name]
    if isinstance(expr, Vec):
        for item in expr.items:
            if infer_type(item, env) != SCALAR:
                raise TypeError("vector components must be scalars")
        return VEC3
    if isinstance(expr, Neg):
        t = infer_type(expr.operand, env)
        if t == POSE:
            raise TypeError("cannot negate a pose")
        return t
    if isinstance(expr, BinOp):
        key = (expr.op, infer_type(expr.left, env), infer_type(expr.right, env))
        if key not in BINARY_TYPES:
            raise TypeError(f"operator {key[0]!r} not defined for {key[1]} and {key[2]}")
        return BINARY_TYPES[key]
    sig, ret, _ = FUNCTIONS[expr.fn]
    got = tuple(infer_type(a, env) for a in expr.args)
    if got != sig:
        raise TypeError(f"{expr.fn}() expects ({', '.join(sig)}), got ({', '.join(got)})")
    return ret


def _binop(op, a, b):
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        if isinstance(a, RigidTransform):
            if isinstance(b, RigidTransform):
                return a @ b
            return a.apply_points(b)
        return a * b
    if isinstance(b, float) and b == 0.0:
        raise DomainError("division by zero")
    return a / b


def eval_expr(expr: Expr, bindings: Mapping[str, Value]) -> Value:
    """Evaluate ``expr``; scalars come back as float, vectors as shape-(3,) arrays."""
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Sym):
        if expr.name in CONSTANTS:
            return CONSTANTS[expr.name][1]
        try:
            v = bindings[expr.name]
        except KeyError:
            raise MissingBinding(f"no binding for symbol {expr.name!r}") from None
        if isinstance(v, (int, float, np.floating, np.integer)):
            return float(v)
        if isinstance(v, RigidTransform):
            return v
        return np.asarray(v, dtype=float)
    if isinstance(expr, Vec):
        return np.array([eval_expr(i, bindings) for i in expr.items], dtype=float)
    if isinstance(expr, Neg):
        return -eval_expr(expr.operand, bindings)
    if isinstance(expr, BinOp):
        out = _binop(expr.op, eval_expr(expr.left, bindings), eval_expr(expr.right, bindings))
    else:
        args = [eval_expr(a, bindings) for a in expr.args]
        try:
            out = FUNCTIONS[expr.fn][2](*args)
        except (OverflowError, ValueError) as exc:
            if isinstance(exc, DomainError):
                raise
            raise DomainError(f"{expr.fn}(): {exc}") from None
    if isinstance(out, RigidTransform):
        if not (np.all(np.isfinite(out.R)) and np.all(np.isfinite(out.t))):
            raise DomainError("non-finite pose")
    elif not np.all(np.isfinite(out)):
        raise DomainError("non-finite result")
    if isinstance(out, np.ndarray) and out.ndim == 0:
        out = float(out)
    return out


def to_source(expr: Expr, parent_prec: int = 0, right_side: bool = False) -> str:
    """Canonical text for ``expr``; re-parsing gives back the same tree."""
    if isinstance(expr, Num):
        return repr(float(expr.value))
    if isinstance(expr, Sym):
        return expr.name
    if isinstance(expr, Vec):
        return "[" + ", ".join(to_source(i) for i in expr.items) + "]"
    if isinstance(expr, Call):
        return expr.fn + "(" + ", ".join(to_source(a) for a in expr.args) + ")"
    if isinstance(expr, Neg):
        return "-" + to_source(expr.operand, 3)
    prec = PRECEDENCE[expr.op]
    text = f"{to_source(expr.left, prec)} {expr.op} {to_source(expr.right, prec, True)}"
    if prec < parent_prec or (right_side and prec == parent_prec):
        return "(" + text + ")"
    return text
