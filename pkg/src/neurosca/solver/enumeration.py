"""Exhaustive bitvector enumeration, vectorised over chunks of assignments.

Assignments are ordered lexicographically by variable name, first name
most significant, so the first model found is the smallest in that order.
Every constraint is evaluated over the whole chunk in formula order (a chunk
is abandoned once no assignment survives), so the cost of a satisfiable
formula grows with search space times formula size.
"""

from __future__ import annotations

import time
from typing import Mapping, Sequence

import numpy as np

from ..ir import Binary, BoolOp, Cmp, Const, Constraint, Load, Not, Unary, Var
from .base import prepare

MAX_WIDTH = 16
MAX_VARS = 3
MAX_SPACE_BITS = 24
CHUNK = 1 << 16


def _arith(op, a, b, width, mask):
    if op == "+":
        return (a + b) & mask
    if op == "-":
        return (a - b) & mask
    if op == "*":
        return (a * b) & mask
    if op in ("/", "%"):
        zero = b == 0
        safe = np.where(zero, np.uint64(1), b)
        q = a // safe if op == "/" else a % safe
        return np.where(zero, np.uint64(0), q)
    if op == "&":
        return a & b
    if op == "|":
        return a | b
    if op == "^":
        return a ^ b
    if op in ("<<", ">>"):
        big = b >= width
        amt = np.minimum(b, np.uint64(width))
        r = ((a << amt) & mask) if op == "<<" else (a >> amt)
        return np.where(big, np.uint64(0), r)
    raise ValueError(op)


_CMP = {
    "==": np.equal,
    "!=": np.not_equal,
    "<": np.less,
    "<=": np.less_equal,
    ">": np.greater,
    ">=": np.greater_equal,
}


def eval_array(node, cols: Mapping[str, np.ndarray], width: int):
    """Evaluate over columns of candidate values (uint64 arrays)."""
    mask = np.uint64((1 << width) - 1)
    if isinstance(node, Const):
        return np.uint64(node.value) & mask
    if isinstance(node, (Var, Load)):
        return cols[node.name]
    if isinstance(node, Unary):
        return ~eval_array(node.arg, cols, width) & mask
    if isinstance(node, Binary):
        a = np.asarray(eval_array(node.left, cols, width), dtype=np.uint64)
        b = np.asarray(eval_array(node.right, cols, width), dtype=np.uint64)
        return _arith(node.op, a, b, width, mask)
    if isinstance(node, Cmp):
        return _CMP[node.op](eval_array(node.left, cols, width), eval_array(node.right, cols, width))
    if isinstance(node, Not):
        return np.logical_not(eval_array(node.arg, cols, width))
    if isinstance(node, BoolOp):
        f = np.logical_and if node.op == "&&" else np.logical_or
        return f(eval_array(node.left, cols, width), eval_array(node.right, cols, width))
    raise TypeError(f"not an IR node: {node!r}")


def _decode(idx: np.ndarray, names, width):
    mask = np.uint64((1 << width) - 1)
    n = len(names)
    return {name: (idx >> np.uint64(width * (n - 1 - i))) & mask for i, name in enumerate(names)}


def within_cap(n_vars: int, width: int) -> bool:
    return width <= MAX_WIDTH and n_vars <= MAX_VARS and width * n_vars <= MAX_SPACE_BITS


class EnumerationBackend:
    """Brute-force oracle for widths up to 16 bits and at most three free names."""

    name = "enumeration"

    def __init__(self, chunk: int = CHUNK):
        self.chunk = chunk

    def check(self, problem, timeout: float):
        names, width = problem.names, problem.width
        if not within_cap(len(names), width):
            return "unknown", None, f"search space {len(names)}x{width} bits exceeds enumeration cap"
        deadline = time.perf_counter() + timeout
        total = 1 << (width * len(names))
        for start in range(0, total, self.chunk):
            if time.perf_counter() > deadline:
                return "timeout", None, ""
            idx = np.arange(start, min(total, start + self.chunk), dtype=np.uint64)
            cols = _decode(idx, names, width)
            m = np.ones(idx.shape, dtype=bool)
            for pred in problem.preds:
                m &= np.broadcast_to(eval_array(pred, cols, width), idx.shape)
                if not m.any():
                    break
            hits = np.flatnonzero(m)
            if hits.size:
                return "sat", assignment_at(start + int(hits[0]), names, width), ""
        return "unsat", None, ""


def sat_mask(constraints: Sequence[Constraint], names: Sequence[str], fixed: Mapping[str, int] = ()):
    """Boolean vector of satisfying assignments over the grid spanned by ``names``.

    ``names`` must cover the free variables of ``constraints``; extra names
    are allowed, which makes masks of sub-formulas directly comparable.
    """
    problem = prepare(constraints, fixed)
    missing = set(problem.names) - set(names)
    if missing:
        raise ValueError(f"names do not cover {sorted(missing)}")
    width = problem.width
    names = list(names)
    total = 1 << (width * len(names))
    out = np.empty(total, dtype=bool)
    for start in range(0, total, 1 << 20):
        idx = np.arange(start, min(total, start + (1 << 20)), dtype=np.uint64)
        cols = _decode(idx, names, width)
        m = np.ones(idx.shape, dtype=bool)
        for pred in problem.preds:
            m &= np.broadcast_to(eval_array(pred, cols, width), idx.shape)
        out[start:start + idx.size] = m
    return out


def assignment_at(index: int, names: Sequence[str], width: int) -> dict[str, int]:
    mask = (1 << width) - 1
    n = len(names)
    return {name: (index >> (width * (n - 1 - i))) & mask for i, name in enumerate(names)}
