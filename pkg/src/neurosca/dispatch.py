"""Selective invocation: probe with the baseline solver, escalate hard paths.

Decisions and winning cores are cached by a structural fingerprint of the
goal formula, so a recurring path pattern costs at most one selector query.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .anchoring import AnchoredSplit, anchored_decompose
from .coreselect import DEFAULT_K_MAX, SelectionResponse, build_psi0, heuristic_fallback, select_core, validate
from .ir import GoalFormula, Load, Var, walk
from .minivm import ContractProgram, TxInput, consistent_with_path, execute, reaches_goal
from .refine import DEFAULT_ROUNDS, RefinementResult, concretize, refine_loop
from .solver import BackendError, CallRecord, SolveOutcome, SolverStats, solve

log = logging.getLogger(__name__)

MODES = ("baseline", "neurosca-only", "selective")
CACHE_VERSION = "neurosca-cache-v1"


@dataclass
class SolverConfig:
    mode: str = "selective"
    t_short: float = 1.5
    t_neur: float = 5.0
    baseline_timeout: float = 60.0
    rounds: int = DEFAULT_ROUNDS
    k_max: int = DEFAULT_K_MAX
    full_fallback: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("t_short", "t_neur", "baseline_timeout"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 1 <= self.k_max <= 16:
            raise ValueError("k_max must be within 1..16")
        if self.rounds < 0:
            raise ValueError("rounds must be non-negative")


class DispatchBackendError(BackendError):
    def __init__(self, mode: str, cause: Exception):
        super().__init__(f"[{mode}] {cause}")
        self.mode = mode


# -- fingerprints and cache --------------------------------------------------


def _roles(c) -> list[str]:
    roles = []
    for n in walk(c.pred):
        if isinstance(n, Var):
            roles.append(n.role)
        elif isinstance(n, Load):
            roles.append("storage")
    return sorted(roles)


def fingerprint(g: GoalFormula) -> str:
    """Digest of kind sequence, per-constraint variable roles and the goal; constants elided."""
    doc = {
        "kinds": [c.kind for c in g.constraints],
        "roles": [_roles(c) for c in g.constraints],
        "goal": [g.goal.site, g.goal.direction],
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


@dataclass
class CacheEntry:
    label: str  # easy | hard
    core: tuple[int, ...] | None = None
    hits: int = 0


class FingerprintCache:
    def __init__(self, contract_hash: str = ""):
        self.contract_hash = contract_hash
        self.entries: dict[str, CacheEntry] = {}

    def __len__(self):
        return len(self.entries)

    def lookup(self, key: str) -> CacheEntry | None:
        entry = self.entries.get(key)
        if entry is not None:
            entry.hits += 1
        return entry

    def put(self, key: str, label: str, core=None) -> CacheEntry:
        if label == "easy":
            core = None
        entry = CacheEntry(label, tuple(core) if core is not None else None)
        self.entries[key] = entry
        return entry

    def save(self, path) -> None:
        doc = {
            "version": CACHE_VERSION,
            "entries": {
                k: {"label": e.label, "core": list(e.core) if e.core is not None else None, "contract_hash": self.contract_hash}
                for k, e in sorted(self.entries.items())
            },
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def load(cls, path, contract_hash: str = "") -> "FingerprintCache":
        cache = cls(contract_hash)
        p = Path(path)
        if not p.exists():
            return cache
        doc = json.loads(p.read_text())
        if doc.get("version") != CACHE_VERSION:
            log.warning("ignoring cache %s with version %r", path, doc.get("version"))
            return cache
        for k, e in doc.get("entries", {}).items():
            if e.get("contract_hash", "") != contract_hash:
                continue
            cache.put(k, e["label"], e.get("core"))
        return cache


# -- dispatcher --------------------------------------------------------------


@dataclass
class DispatchResult:
    mode_used: str
    input: TxInput | None = None
    outcome: SolveOutcome | None = None
    refinement: RefinementResult | None = None
    fingerprint: str = ""
    selector_called: bool = False
    fallback_used: bool = False
    core: SelectionResponse | None = None

    @property
    def accepted(self) -> bool:
        return self.input is not None


@dataclass
class Dispatcher:
    """Per-worker solving front end owning its cache, stats and counters."""

    config: SolverConfig
    backend: object
    selector: object = None
    cache: FingerprintCache = field(default_factory=FingerprintCache)
    stats: SolverStats = field(default_factory=SolverStats)
    selector_calls: int = 0
    fallbacks: int = 0
    rounds_histogram: Counter = field(default_factory=Counter)

    def solve(self, g: GoalFormula, p: ContractProgram, state: Mapping[int, int], split: AnchoredSplit | None = None):
        mode = self.config.mode
        try:
            if mode == "baseline":
                return self._baseline(g, p, state, self.config.baseline_timeout, "baseline")
            if split is None:
                split = anchored_decompose(g, p)
            if mode == "neurosca-only":
                return self._pipeline(g, split, p, state, None, "neurosca")
            return self._selective(g, split, p, state)
        except BackendError as e:
            if isinstance(e, DispatchBackendError):
                raise
            raise DispatchBackendError(mode, e) from e

    def _verify(self, model, g, p, state) -> TxInput | None:
        tx = concretize(model, g, p)
        trace, _ = execute(p, tx, state, g.width)
        ok, _ = consistent_with_path(trace, g)
        return tx if ok and reaches_goal(trace, g.goal) else None

    def _baseline(self, g, p, state, timeout, tag) -> DispatchResult:
        out = solve(g.constraints, timeout, self.backend, g.fixed_env)
        self.stats.add(CallRecord(len(g), out.status, out.wall_time, tag))
        tx = self._verify(out.model, g, p, state) if out.status == "sat" else None
        return DispatchResult(tag, tx, out)

    def _select(self, split, g) -> SelectionResponse:
        if self.selector is not None and split.soft:
            self.selector_calls += 1
        resp = select_core(split, g.goal, self.selector, self.config.k_max, g.function)
        if resp.fallback_used:
            self.fallbacks += 1
        return resp

    def _pipeline(self, g, split, p, state, core: SelectionResponse | None, tag) -> DispatchResult:
        called = core is None and self.selector is not None and bool(split.soft)
        if core is None:
            core = self._select(split, g)
        psi0 = build_psi0(split, core)
        res = refine_loop(g, split, psi0, p, state, self.config.rounds, self.config.t_neur, self.backend, self.stats)
        self.rounds_histogram[res.rounds] += 1
        out = DispatchResult(tag, res.input, res.outcomes[-1] if res.outcomes else None, res)
        if not res.ok and self.config.full_fallback:
            out = self._baseline(g, p, state, self.config.baseline_timeout, "full-fallback")
            out.refinement = res
        out.selector_called = called
        out.fallback_used = core.fallback_used
        out.core = core
        return out

    def _selective(self, g, split, p, state) -> DispatchResult:
        key = fingerprint(g)
        entry = self.cache.lookup(key)
        if entry is not None and entry.label == "easy":
            res = self._baseline(g, p, state, self.config.baseline_timeout, "baseline-cached")
        elif entry is not None:
            if entry.core is not None:
                core = validate(entry.core, (), split.soft_ids, 16, "cache") or SelectionResponse((), (), "cache")
            else:
                # a known-hard pattern that failed before: no new selector query
                core = heuristic_fallback(split, self.config.k_max) if split.soft else SelectionResponse((), (), "empty")
            res = self._pipeline(g, split, p, state, core, "neurosca-cached")
            self._store(key, res, core)
        else:
            probe = solve(g.constraints, self.config.t_short, self.backend, g.fixed_env)
            self.stats.add(CallRecord(len(g), probe.status, probe.wall_time, "probe"))
            if probe.decided:
                self.cache.put(key, "easy")
                tx = self._verify(probe.model, g, p, state) if probe.status == "sat" else None
                res = DispatchResult("baseline-probe", tx, probe)
            else:
                res = self._pipeline(g, split, p, state, None, "neurosca")
                self._store(key, res, res.core)
        res.fingerprint = key
        return res

    def _store(self, key, res: DispatchResult, core: SelectionResponse | None):
        if res.accepted and res.refinement is not None and core is not None:
            ids = tuple(core.core_indices) + tuple(res.refinement.reintroduced)
            self.cache.put(key, "hard", sorted(set(ids)))
        else:
            self.cache.put(key, "hard", None)


def dispatch_solve(g, split, p, state, config: SolverConfig, cache: FingerprintCache, backend, selector=None):
    """Functional wrapper around a throwaway :class:`Dispatcher` sharing ``cache``."""
    d = Dispatcher(config, backend, selector, cache)
    res = d.solve(g, p, state, split)
    return res, res.mode_used, cache
