"""Concolic replay of a seed transaction into per-branch path conditions.

Only the current transaction is symbolic: arguments and env fields become
free variables while storage left untouched by the transaction is read as
``S[k]`` and pinned to the pre-state snapshot.  Writes made earlier in the
same transaction are substituted symbolically.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

from .ir import (
    Binary,
    BranchGoal,
    Cmp,
    Const,
    Constraint,
    Load,
    Not,
    PathCondition,
    Var,
    evaluate,
    names_of,
    negate,
    storage_name,
    substitute,
    walk,
)
from .minivm import Advance, Bug, ContractProgram, If, Require, Store, TxInput, iter_statements, tx_env

TIME_VARS = frozenset({"timestamp", "blocknumber"})
SHAPE_VARS = frozenset({"sig", "calldatasize"})


@dataclass
class SymState:
    env: dict[str, int]  # concrete seed values, used to orient branches
    storage: dict[int, int]  # pre-state snapshot
    written: dict[int, object]  # slot -> symbolic value written in this tx
    constraints: list[Constraint]

    def lift(self, node):
        # pre-state reads stay as S[k]; slots already written carry their expression
        return substitute(node, {storage_name(k): v for k, v in self.written.items()})

    def concrete_scope(self) -> dict[str, int]:
        scope = dict(self.env)
        for slot, v in self.storage.items():
            scope[storage_name(slot)] = v
        return scope


def _fixed_for(constraints, storage: Mapping[int, int]) -> tuple[tuple[str, int], ...]:
    names = set()
    for c in constraints:
        names |= {n for n in c.vars if n.startswith("S[")}
    return tuple(sorted((n, storage.get(int(n[2:-1]), 0)) for n in names))


def collect_path(p: ContractProgram, seed: TxInput, state: Mapping[int, int] | None = None, width: int = 64):
    """Replay ``seed`` and return one ``(PathCondition, BranchGoal)`` per visited site.

    Each guard is oriented so the seed satisfies it; the goal asks for the
    other direction.
    """
    if state is None:
        state = p.initial_storage()
    f, env = tx_env(p, seed, state)
    st = SymState(env, dict(state), {}, [])
    scope = st.concrete_scope()

    def value(node):
        return evaluate(node, _Scope(scope), width)

    def run(body) -> bool:
        for s in body:
            if isinstance(s, (Require, If)):
                pred = st.lift(s.pred)
                taken = bool(value(pred))
                oriented = pred if taken else negate(pred)
                st.constraints.append(Constraint(len(st.constraints) + 1, oriented, site=s.site, taken=taken, width=width))
                if isinstance(s, Require):
                    if not taken:
                        return False
                elif not run(s.then if taken else s.orelse):
                    return False
            elif isinstance(s, (Store, Advance)):
                # lifted terms read the pre-state only, so the scope stays untouched
                st.written[s.slot] = st.lift(s.value)
            elif isinstance(s, Bug):
                pass
        return True

    run(f.body)
    writes = storage_writes(p)
    out = []
    for k in range(1, len(st.constraints) + 1):
        raw = st.constraints[:k]
        guard = raw[-1]
        closure = dependency_closure(p, guard.vars, writes)
        tagged = tuple(replace(c, kind=tag_constraint_kind(c, p, guard, closure)) for c in raw)
        pc = PathCondition(tagged, function=f.name, fixed=_fixed_for(tagged, state))
        out.append((pc, BranchGoal(guard.site, not guard.taken)))
    return out


class _Scope(dict):
    def __missing__(self, key):
        if key.startswith("S["):
            return 0
        raise KeyError(key)


def storage_writes(p: ContractProgram) -> dict[str, set[str]]:
    writes: dict[str, set[str]] = {}
    for f in p.functions:
        for s in iter_statements(f.body):
            if isinstance(s, (Store, Advance)):
                writes.setdefault(storage_name(s.slot), set()).update(names_of(s.value))
    return writes


def dependency_closure(p: ContractProgram, names, writes=None) -> frozenset[str]:
    """Names that may flow into ``names`` through storage writes anywhere in ``p``."""
    if writes is None:
        writes = storage_writes(p)
    closure = set(names)
    frontier = list(closure)
    while frontier:
        n = frontier.pop()
        for dep in writes.get(n, ()):
            if dep not in closure:
                closure.add(dep)
                frontier.append(dep)
    return frozenset(closure)


def _is_bound_check(pred) -> bool:
    if not isinstance(pred, Cmp):
        return False
    left, right, op = pred.left, pred.right, pred.op
    if isinstance(left, Const):
        left, right = right, left
        op = {"<": ">", "<=": ">=", ">": "<", ">=": "<="}.get(op, op)
    return isinstance(left, Var) and left.role == "input" and isinstance(right, Const) and op in ("<", "<=")


def _is_flag_check(pred) -> bool:
    if not isinstance(pred, Cmp) or pred.op not in ("==", "!="):
        return False
    sides = {type(pred.left), type(pred.right)}
    zero = Const(0) in (pred.left, pred.right)
    return sides == {Load, Const} and zero


def _is_nonlinear(pred) -> bool:
    for n in walk(pred):
        if isinstance(n, Binary) and n.op in ("*", "/", "%", "<<", ">>"):
            if not isinstance(n.left, Const) and not isinstance(n.right, Const):
                return True
    return False


def tag_constraint_kind(c: Constraint, p: ContractProgram, guard: Constraint, closure=None) -> str:
    """Classify ``c`` relative to the target guard; sharing data with the guard wins."""
    if closure is None:
        closure = dependency_closure(p, guard.vars)
    pred = c.pred.arg if isinstance(c.pred, Not) else c.pred
    if c.vars & closure:
        return "guard-dep"
    if c.vars & SHAPE_VARS:
        return "input-shape"
    if c.vars & TIME_VARS:
        return "timelock"
    if any(n.startswith("S[") for n in c.vars):
        return "global-flag" if _is_flag_check(pred) else "unrelated-storage"
    if _is_bound_check(c.pred):
        return "safety"
    if _is_nonlinear(c.pred):
        return "complex-arith"
    return "other"
