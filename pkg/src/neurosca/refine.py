"""Verifier-in-the-loop abstraction refinement.

Each round solves the current abstraction, runs the model on the VM and
either accepts it (the concrete trace follows the symbolic path and flips the
goal) or conjoins the prefix constraint owning the first divergent site.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping

from .anchoring import AnchoredSplit
from .coreselect import Abstraction
from .ir import Constraint, GoalFormula
from .minivm import DEFAULT_ENV, BranchTrace, ContractProgram, TxInput, consistent_with_path, execute, reaches_goal
from .solver import CallRecord, SolveOutcome, SolverStats, solve

log = logging.getLogger(__name__)

DEFAULT_ROUNDS = 4


@dataclass
class RefinementResult:
    status: str  # sat-with-input | fail-unsat | fail-exhausted | fail-no-missing
    input: TxInput | None = None
    rounds: int = 0
    reintroduced: tuple[int, ...] = ()
    outcomes: list[SolveOutcome] = field(default_factory=list)
    final: Abstraction | None = None
    log: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "sat-with-input"


def concretize(model: Mapping[str, int], g: GoalFormula, p: ContractProgram, width: int | None = None) -> TxInput:
    """Model to transaction; unconstrained arguments are 0, env fields use the defaults."""
    width = g.width if width is None else width
    mask = (1 << width) - 1
    f = p.function(g.function)
    args = tuple(int(model.get(name, 0)) & mask for name in f.params)
    env = {k: int(model[k]) & mask if k in model else v & mask for k, v in DEFAULT_ENV.items()}
    return TxInput.make(f.selector, args, **env)


def first_missing_constraint(trace: BranchTrace, g: GoalFormula) -> Constraint | None:
    ok, site = consistent_with_path(trace, g)
    if ok or site is None:
        return None
    for c in g.prefix:
        if c.site == site:
            return c
    return None


def refine_loop(
    g: GoalFormula,
    split: AnchoredSplit,
    psi0: Abstraction,
    p: ContractProgram,
    state: Mapping[int, int],
    rounds: int = DEFAULT_ROUNDS,
    t_neur: float = 5.0,
    backend=None,
    stats: SolverStats | None = None,
) -> RefinementResult:
    if rounds < 0:
        raise ValueError("refinement bound must be non-negative")
    psi = psi0
    fixed = g.fixed_env
    result = RefinementResult("fail-exhausted", final=psi)
    reintroduced: list[int] = []
    for k in range(rounds + 1):
        out = solve(psi.constraints, t_neur, backend, fixed)
        result.outcomes.append(out)
        if stats is not None:
            stats.add(CallRecord(len(psi), out.status, out.wall_time, "neurosca"))
        entry = {"round": k, "size": len(psi), "outcome": out.status, "divergence": None}
        if out.status != "sat":
            result.status = "fail-unsat"
            _emit(result, entry)
            break
        tx = concretize(out.model, g, p)
        trace, _ = execute(p, tx, state, g.width)
        consistent, site = consistent_with_path(trace, g)
        if consistent and reaches_goal(trace, g.goal):
            result.status, result.input = "sat-with-input", tx
            _emit(result, entry)
            break
        entry["divergence"] = site
        _emit(result, entry)
        missing = first_missing_constraint(trace, g)
        if missing is None or missing.id in psi.ids:
            result.status = "fail-no-missing"
            break
        if k == rounds:
            result.status = "fail-exhausted"
            break
        psi = psi.refined(missing)
        reintroduced.append(missing.id)
    result.rounds = len(reintroduced)
    result.reintroduced = tuple(reintroduced)
    result.final = psi
    return result


def _emit(result: RefinementResult, entry: dict) -> None:
    result.log.append(entry)
    log.debug("refine %s", json.dumps(entry, sort_keys=True))

