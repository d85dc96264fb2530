"""Core selection over the soft constraints, and the initial abstraction.

A selector backend is any object with ``complete(system, user, request)``
returning the raw response text, plus a ``calls`` counter.  Two are shipped:
an HTTP chat-completions client and a canned-response store keyed by
request fingerprint.  Everything that goes wrong on the selector side ends
in the recency heuristic, never in an exception.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .anchoring import AnchoredSplit
from .ir import BranchGoal, Constraint
from .syntax import canonical_text

log = logging.getLogger(__name__)

DEFAULT_K_MAX = 8

SYSTEM_PROMPT = (
    "You are an expert on smart-contract analysis and symbolic execution. "
    "Given a target branch and a set of path constraints, identify which constraints are semantically "
    "most important for deciding whether the branch can be taken. "
    "Do not attempt to solve the constraints; instead, rank them by relevance to the goal."
)

USER_TEMPLATE = (
    "Goal: We want to satisfy the branch at program counter <PC> in function <FUNC>. "
    "The high-level guard of this branch is <GUARD_DESC>.\n"
    "Constraints: Below is a list <SOFT_CONSTRAINTS> of candidate constraints. "
    "Each entry has an id, expr, kind, and vars. "
    'Example: id=1, expr="block.timestamp > unlockTime", kind="timelock", '
    'vars=["block.timestamp","unlockTime"].\n'
    "Task: (1) Choose a small list core_indices (typically 4--16 ids) that are most important for "
    "controlling whether the goal branch can be taken. "
    "(2) Produce a complete ranking of all constraint ids from most to least important.\n"
    "Guidance: Treat generic timelocks and global flags as noise unless they clearly dominate feasibility. "
    "Focus on constraints that directly affect balances, user inputs, and variables in the guard.\n"
    'Output format: A JSON object of the form {"core_indices": [...], "ranking": [...]} only.'
)


class TransportError(RuntimeError):
    pass


class ResponseFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SoftEntry:
    id: int
    expr: str
    kind: str
    vars: tuple[str, ...]

    def line(self) -> str:
        names = json.dumps(list(self.vars), separators=(",", ":"))
        return f"id={self.id}, expr={json.dumps(self.expr)}, kind={json.dumps(self.kind)}, vars={names}"


@dataclass(frozen=True)
class SelectionRequest:
    site: int
    function: str
    guard: str
    soft: tuple[SoftEntry, ...]
    k_max: int = DEFAULT_K_MAX

    def __post_init__(self):
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")

    @classmethod
    def build(cls, split: AnchoredSplit, goal: BranchGoal, function: str | None = None, k_max: int = DEFAULT_K_MAX):
        soft = tuple(SoftEntry(c.id, canonical_text(c), c.kind, tuple(sorted(c.vars))) for c in split.soft)
        return cls(goal.site, function or "?", canonical_text(split.guard), soft, k_max)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(e.id for e in self.soft)

    def fingerprint(self) -> str:
        doc = {
            "site": self.site,
            "function": self.function,
            "guard": self.guard,
            "soft": [[e.id, e.expr, e.kind, list(e.vars)] for e in self.soft],
            "k_max": self.k_max,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:32]


@dataclass(frozen=True)
class SelectionResponse:
    core_indices: tuple[int, ...]
    ranking: tuple[int, ...]
    source: str = "selector"  # selector | heuristic | empty | cache

    @property
    def fallback_used(self) -> bool:
        return self.source == "heuristic"


def build_prompt(req: SelectionRequest) -> tuple[str, str]:
    listing = "\n" + "\n".join(e.line() for e in req.soft) + "\n"
    user = (
        USER_TEMPLATE.replace("<PC>", str(req.site))
        .replace("<FUNC>", req.function)
        .replace("<GUARD_DESC>", req.guard)
        .replace("<SOFT_CONSTRAINTS>", listing)
    )
    return SYSTEM_PROMPT, user


_FENCE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.S)


def parse_response(text: str) -> tuple[list, list]:
    """Extract ``core_indices`` and ``ranking`` from a selector reply."""
    if not isinstance(text, str):
        raise ResponseFormatError("response is not text")
    body = text.strip()
    m = _FENCE.match(body)
    if m:
        body = m.group(1)
    try:
        doc = json.loads(body)
    except json.JSONDecodeError as e:
        raise ResponseFormatError(f"not JSON: {e}") from e
    if not isinstance(doc, dict) or set(doc) != {"core_indices", "ranking"}:
        raise ResponseFormatError("expected exactly the keys core_indices and ranking")
    core, ranking = doc["core_indices"], doc["ranking"]
    if not isinstance(core, list) or not isinstance(ranking, list):
        raise ResponseFormatError("core_indices and ranking must be lists")
    return core, ranking


def _ints(values):
    return [v for v in values if isinstance(v, int) and not isinstance(v, bool)]


def validate(core: Sequence, ranking: Sequence, soft_ids: Sequence[int], k_max: int, source="selector"):
    """Clean a raw selection; ``None`` when no usable core id survives."""
    allowed = set(soft_ids)
    kept: list[int] = []
    for i in _ints(core):
        if i in allowed and i not in kept:
            kept.append(i)
    kept = kept[:k_max]
    if not kept:
        return None
    order: list[int] = []
    for i in _ints(ranking):
        if i in allowed and i not in order:
            order.append(i)
    order += sorted(allowed - set(order), reverse=True)
    return SelectionResponse(tuple(kept), tuple(order), source)


def heuristic_fallback(split: AnchoredSplit, k: int) -> SelectionResponse:
    """The ``k`` soft constraints closest to the guard."""
    if k < 1:
        raise ValueError("K must be at least 1")
    ids = sorted(split.soft_ids, reverse=True)
    return SelectionResponse(tuple(sorted(ids[:k])), tuple(ids), "heuristic")


def select_core(split: AnchoredSplit, goal: BranchGoal, selector=None, k_max: int = DEFAULT_K_MAX, function=None):
    if not split.soft:
        return SelectionResponse((), (), "empty")
    if selector is None:
        return heuristic_fallback(split, k_max)
    req = SelectionRequest.build(split, goal, function, k_max)
    system, user = build_prompt(req)
    attempts = 1 + max(0, getattr(selector, "retries", 1))
    for attempt in range(attempts):
        try:
            text = selector.complete(system, user, req)
        except TransportError as e:
            log.info("selector transport failed (attempt %d/%d): %s", attempt + 1, attempts, e)
            continue
        try:
            core, ranking = parse_response(text)
        except ResponseFormatError as e:
            log.info("selector response rejected: %s", e)
            break
        resp = validate(core, ranking, split.soft_ids, k_max)
        if resp is not None:
            return resp
        log.info("selector returned no usable core ids")
        break
    return heuristic_fallback(split, k_max)


# -- transports --------------------------------------------------------------


class CannedTransport:
    """Replays stored responses keyed by request fingerprint.

    ``source`` is either a mapping or a directory of ``<fingerprint>.json``
    files whose contents are the raw response body.
    """

    retries = 0

    def __init__(self, source: Mapping[str, str] | str | os.PathLike | None = None):
        self.calls = 0
        self._mapping: dict[str, str] = {}
        self._dir: Path | None = None
        if isinstance(source, Mapping):
            self._mapping = dict(source)
        elif source is not None:
            self._dir = Path(source)

    def add(self, req: SelectionRequest, body: str | dict) -> None:
        self._mapping[req.fingerprint()] = body if isinstance(body, str) else json.dumps(body)

    def complete(self, system: str, user: str, req: SelectionRequest) -> str:
        self.calls += 1
        key = req.fingerprint()
        if key in self._mapping:
            return self._mapping[key]
        if self._dir is not None:
            path = self._dir / f"{key}.json"
            if path.exists():
                return path.read_text()
        raise TransportError(f"no canned response for request {key}")


class HttpTransport:
    """Chat-completions client; one POST per attempt, temperature 0."""

    def __init__(self, base_url=None, model="gpt-4o-mini", api_key=None, timeout=20.0, retries=1):
        self.base_url = (base_url or os.environ.get("NEUROSCA_LLM_URL") or "http://127.0.0.1:8000/v1").rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get("NEUROSCA_LLM_KEY", "")
        self.timeout = timeout
        self.retries = retries
        self.calls = 0

    def request_body(self, system: str, user: str) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
            "temperature": 0,
        }

    def complete(self, system: str, user: str, req: SelectionRequest | None = None) -> str:
        import httpx

        self.calls += 1
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            r = httpx.post(
                f"{self.base_url}/chat/completions",
                json=self.request_body(system, user),
                headers=headers,
                timeout=self.timeout,
            )
            r.raise_for_status()
            return r.json()["choices"][0]["message"]["content"]
        except (httpx.HTTPError, ValueError, KeyError, IndexError, TypeError) as e:
            raise TransportError(str(e)) from e


# -- abstraction -------------------------------------------------------------


@dataclass(frozen=True)
class Abstraction:
    hard: tuple[Constraint, ...]
    core: tuple[Constraint, ...]
    negated: Constraint
    additions: tuple[Constraint, ...] = ()
    k: int = 0
    ranking: tuple[int, ...] = field(default=(), compare=False)

    @property
    def constraints(self) -> tuple[Constraint, ...]:
        body = sorted(self.hard + self.core + self.additions, key=lambda c: c.id)
        return tuple(body) + (self.negated,)

    @property
    def ids(self) -> frozenset[int]:
        return frozenset(c.id for c in self.hard + self.core + self.additions)

    def __len__(self):
        return len(self.hard) + len(self.core) + len(self.additions) + 1

    def refined(self, c: Constraint) -> "Abstraction":
        return replace(self, additions=self.additions + (c,), k=self.k + 1)


def build_psi0(split: AnchoredSplit, core: SelectionResponse) -> Abstraction:
    chosen = set(core.core_indices)
    picked = tuple(c for c in split.soft if c.id in chosen)
    return Abstraction(split.hard, picked, split.guard, (), 0, core.ranking)
