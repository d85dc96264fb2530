from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..ir import Constraint, conjunction_vars, eval_constraint, evaluate, names_of, substitute

log = logging.getLogger(__name__)

STATUSES = ("sat", "unsat", "unknown", "timeout")


class BackendError(RuntimeError):
    """The solver backend could not be run or spoke an unexpected protocol."""


@dataclass
class SolveOutcome:
    status: str
    model: dict[str, int] | None = None
    wall_time: float = 0.0
    size: int = 0
    diagnostic: str = ""

    @property
    def decided(self) -> bool:
        return self.status in ("sat", "unsat")


@dataclass
class Problem:
    """A conjunction ready for a backend: fixed names substituted away."""

    preds: list = field(default_factory=list)
    names: list[str] = field(default_factory=list)
    width: int = 64


def prepare(constraints: Sequence[Constraint], fixed: Mapping[str, int] = ()) -> Problem:
    fixed = dict(fixed)
    widths = {c.width for c in constraints}
    if len(widths) != 1:
        raise ValueError(f"mixed bit widths in one formula: {sorted(widths)}")
    width = widths.pop()
    preds = []
    for c in constraints:
        pred = substitute(c.pred, fixed) if fixed else c.pred
        if names_of(pred):
            preds.append(pred)
        elif not evaluate(pred, {}, width):
            # a ground conjunct that is false decides the whole formula
            return Problem([pred], [], width)
    names = sorted(conjunction_vars(constraints) - fixed.keys())
    return Problem(preds, names, width)


def solve(constraints: Sequence[Constraint], timeout: float, backend, fixed: Mapping[str, int] = ()) -> SolveOutcome:
    """Decide a conjunction under a wall-clock budget.

    Sat models are re-checked with the scalar evaluator before they are
    returned; a model that fails the check downgrades the result to unknown.
    """
    if timeout <= 0:
        raise ValueError("timeout must be positive")
    constraints = list(constraints)
    if not constraints:
        raise ValueError("empty formula")
    fixed = dict(fixed)
    problem = prepare(constraints, fixed)
    start = time.perf_counter()
    status, model, diag = backend.check(problem, timeout)
    wall = time.perf_counter() - start
    out = SolveOutcome(status, None, wall, len(constraints), diag)
    if status == "sat":
        model = {n: int(model.get(n, 0)) for n in problem.names}
        env = {**model, **fixed}
        bad = [c.id for c in constraints if not eval_constraint(c, env)]
        if bad:
            out.status = "unknown"
            out.diagnostic = f"model rejected by evaluator on constraint(s) {bad}"
            log.warning("%s: %s", type(backend).__name__, out.diagnostic)
        else:
            out.model = model
    return out
