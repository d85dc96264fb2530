"""Kind-driven split of a goal prefix into an anchored backbone and a soft remainder."""

from __future__ import annotations

from dataclasses import dataclass

from .ir import Constraint, GoalFormula

HARD_KINDS = frozenset({"guard-dep", "input-shape", "safety"})


@dataclass(frozen=True)
class AnchoredSplit:
    hard: tuple[Constraint, ...]
    soft: tuple[Constraint, ...]
    guard: Constraint  # the negated guard asserted by the goal

    @property
    def soft_ids(self) -> tuple[int, ...]:
        return tuple(c.id for c in self.soft)

    def soft_by_id(self) -> dict[int, Constraint]:
        return {c.id: c for c in self.soft}


def anchored_decompose(g: GoalFormula, p=None) -> AnchoredSplit:
    """Order-preserving partition of ``g.prefix``.

    ``p`` is accepted for interface symmetry; kinds are already attached to
    the constraints by path collection.
    """
    hard = tuple(c for c in g.prefix if c.kind in HARD_KINDS)
    soft = tuple(c for c in g.prefix if c.kind not in HARD_KINDS)
    return AnchoredSplit(hard, soft, g.negated)
