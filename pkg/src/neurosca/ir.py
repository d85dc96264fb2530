"""Constraint IR: bitvector expressions, predicates, path conditions and goals.

Expressions are width-less trees; the bit width is carried by the
:class:`Constraint` that owns them, so one constraint is always evaluated at
a single width.  All nodes are frozen dataclasses and hash structurally.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Union

ENV_VARS = frozenset({"timestamp", "sender", "callvalue", "blocknumber"})

ARITH_OPS = ("+", "-", "*", "/", "%", "&", "|", "^", "<<", ">>")
CMP_OPS = ("==", "!=", "<", "<=", ">", ">=")
BOOL_OPS = ("&&", "||")

KINDS = (
    "guard-dep",
    "input-shape",
    "safety",
    "timelock",
    "global-flag",
    "unrelated-storage",
    "complex-arith",
    "other",
)


class MalformedInputError(ValueError):
    pass


class EvaluationError(LookupError):
    def __init__(self, name: str):
        super().__init__(f"unbound variable {name!r}")
        self.name = name


# -- expressions -------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Var:
    """A free symbol: a function argument, or one of ``ENV_VARS``."""

    name: str

    @property
    def role(self) -> str:
        return f"env:{self.name}" if self.name in ENV_VARS else "input"


@dataclass(frozen=True)
class Load:
    """Storage read ``S[slot]``."""

    slot: int

    @property
    def name(self) -> str:
        return storage_name(self.slot)


@dataclass(frozen=True)
class Unary:
    op: str  # only "~"
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, Load, Unary, Binary]


# -- predicates --------------------------------------------------------------


@dataclass(frozen=True)
class Cmp:
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Not:
    arg: "Pred"


@dataclass(frozen=True)
class BoolOp:
    op: str
    left: "Pred"
    right: "Pred"


Pred = Union[Cmp, Not, BoolOp]

EXPR_TYPES = (Const, Var, Load, Unary, Binary)
PRED_TYPES = (Cmp, Not, BoolOp)


def storage_name(slot: int) -> str:
    return f"S[{slot}]"


def negate(p: Pred) -> Pred:
    return p.arg if isinstance(p, Not) else Not(p)


def names_of(node) -> frozenset[str]:
    """Variable, env and storage names read by ``node``."""
    out: set[str] = set()
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Var):
            out.add(n.name)
        elif isinstance(n, Load):
            out.add(n.name)
        elif isinstance(n, (Unary, Not)):
            stack.append(n.arg)
        elif isinstance(n, (Binary, Cmp, BoolOp)):
            stack.append(n.left)
            stack.append(n.right)
    return frozenset(out)


def walk(node):
    """Pre-order iterator over every node of an expression or predicate."""
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        if isinstance(n, (Unary, Not)):
            stack.append(n.arg)
        elif isinstance(n, (Binary, Cmp, BoolOp)):
            stack.append(n.right)
            stack.append(n.left)


def substitute(node, binding: Mapping[str, object]):
    """Replace named leaves by nodes (or ints, lifted to ``Const``)."""

    def lift(v):
        return Const(v) if isinstance(v, int) else v

    def go(n):
        if isinstance(n, (Var, Load)):
            return lift(binding[n.name]) if n.name in binding else n
        if isinstance(n, Const):
            return n
        if isinstance(n, Unary):
            return Unary(n.op, go(n.arg))
        if isinstance(n, Not):
            return Not(go(n.arg))
        if isinstance(n, Binary):
            return Binary(n.op, go(n.left), go(n.right))
        if isinstance(n, Cmp):
            return Cmp(n.op, go(n.left), go(n.right))
        if isinstance(n, BoolOp):
            return BoolOp(n.op, go(n.left), go(n.right))
        raise TypeError(f"not an IR node: {n!r}")

    return go(node)


# -- scalar semantics --------------------------------------------------------


def arith(op: str, a: int, b: int, width: int) -> int:
    mask = (1 << width) - 1
    if op == "+":
        return (a + b) & mask
    if op == "-":
        return (a - b) & mask
    if op == "*":
        return (a * b) & mask
    if op == "/":
        return 0 if b == 0 else a // b
    if op == "%":
        return 0 if b == 0 else a % b
    if op == "&":
        return a & b
    if op == "|":
        return a | b
    if op == "^":
        return a ^ b
    if op == "<<":
        return 0 if b >= width else (a << b) & mask
    if op == ">>":
        return 0 if b >= width else a >> b
    raise ValueError(f"unknown operator {op!r}")


def compare(op: str, a: int, b: int) -> bool:
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise ValueError(f"unknown comparison {op!r}")


def evaluate(node, env: Mapping[str, int], width: int):
    """Evaluate an expression (to int) or a predicate (to bool)."""
    mask = (1 << width) - 1
    if isinstance(node, Const):
        return node.value & mask
    if isinstance(node, (Var, Load)):
        try:
            return env[node.name] & mask
        except KeyError:
            raise EvaluationError(node.name) from None
    if isinstance(node, Unary):
        return ~evaluate(node.arg, env, width) & mask
    if isinstance(node, Binary):
        return arith(node.op, evaluate(node.left, env, width), evaluate(node.right, env, width), width)
    if isinstance(node, Cmp):
        return compare(node.op, evaluate(node.left, env, width), evaluate(node.right, env, width))
    if isinstance(node, Not):
        return not evaluate(node.arg, env, width)
    if isinstance(node, BoolOp):
        if node.op == "&&":
            return evaluate(node.left, env, width) and evaluate(node.right, env, width)
        return evaluate(node.left, env, width) or evaluate(node.right, env, width)
    raise TypeError(f"not an IR node: {node!r}")


# -- constraints and formulas ------------------------------------------------


@dataclass(frozen=True)
class Constraint:
    """One oriented branch predicate along a path.

    ``site`` is the branch site that produced it and ``taken`` the direction
    the predicate encodes; hand-built constraints may leave ``site`` unset.
    """

    id: int
    pred: Pred
    kind: str = "other"
    vars: frozenset[str] = field(default=None)  # type: ignore[assignment]
    site: int | None = None
    taken: bool = True
    width: int = 64

    def __post_init__(self):
        if not isinstance(self.pred, PRED_TYPES):
            raise MalformedInputError(f"constraint {self.id}: predicate expected, got {self.pred!r}")
        if self.kind not in KINDS:
            raise MalformedInputError(f"unknown constraint kind {self.kind!r}")
        if self.vars is None:
            object.__setattr__(self, "vars", names_of(self.pred))

    @property
    def text(self) -> str:
        from .syntax import canonical_text

        return canonical_text(self.pred)


def eval_constraint(c: Constraint, env: Mapping[str, int]) -> bool:
    return bool(evaluate(c.pred, env, c.width))


@dataclass(frozen=True)
class BranchGoal:
    site: int
    direction: bool

    def __str__(self):
        return f"{self.site}:{'T' if self.direction else 'F'}"


@dataclass(frozen=True)
class PathCondition:
    """Conjunction c_1..c_n; the last constraint guards the target branch.

    ``fixed`` pins storage names (``S[k]``) to the pre-state snapshot the path
    was collected against.
    """

    constraints: tuple[Constraint, ...]
    function: str | None = None
    fixed: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if not self.constraints:
            raise MalformedInputError("empty path condition")
        ids = [c.id for c in self.constraints]
        if ids != list(range(1, len(ids) + 1)):
            raise MalformedInputError(f"constraint ids must be dense 1..n, got {ids}")

    @property
    def n(self) -> int:
        return len(self.constraints)

    @property
    def guard(self) -> Constraint:
        return self.constraints[-1]

    @property
    def width(self) -> int:
        return self.constraints[0].width


@dataclass(frozen=True)
class GoalFormula:
    prefix: tuple[Constraint, ...]
    negated: Constraint
    goal: BranchGoal
    guard: Constraint
    function: str | None = None
    fixed: tuple[tuple[str, int], ...] = ()

    @property
    def constraints(self) -> tuple[Constraint, ...]:
        return self.prefix + (self.negated,)

    @property
    def path(self) -> tuple[tuple[int | None, bool], ...]:
        """Expected (site, direction) sequence of a trace that flips the goal."""
        return tuple((c.site, c.taken) for c in self.prefix) + ((self.goal.site, self.goal.direction),)

    @property
    def width(self) -> int:
        return self.negated.width

    @property
    def fixed_env(self) -> dict[str, int]:
        return dict(self.fixed)

    def __len__(self):
        return len(self.prefix) + 1


def make_goal_formula(pc: PathCondition, goal: BranchGoal | None = None) -> GoalFormula:
    """Prefix c_1..c_{n-1} conjoined with the negated guard."""
    if not isinstance(pc, PathCondition) or not pc.constraints:
        raise MalformedInputError("empty path condition")
    guard = pc.guard
    if goal is None:
        goal = BranchGoal(guard.site if guard.site is not None else 0, not guard.taken)
    elif guard.site is not None and goal.site != guard.site:
        raise MalformedInputError(f"goal site {goal.site} is not the guard site {guard.site}")
    negated = replace(guard, pred=negate(guard.pred), taken=not guard.taken)
    return GoalFormula(
        prefix=pc.constraints[:-1],
        negated=negated,
        goal=goal,
        guard=guard,
        function=pc.function,
        fixed=pc.fixed,
    )


def conjunction_vars(constraints: Iterable[Constraint]) -> frozenset[str]:
    out: set[str] = set()
    for c in constraints:
        out |= c.vars
    return frozenset(out)
