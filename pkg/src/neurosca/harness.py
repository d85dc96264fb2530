"""Fuzzing campaigns: corpus, mutation, coverage and bug accounting, reports.

A campaign keeps a corpus of transaction sequences (at most ``max_seq`` long).
Sequences that reach new branch directions get explored: the last transaction
is replayed symbolically against the state left by its prefix, and every
still uncovered direction on that path, deepest first, becomes a goal for
the dispatcher.
Between explorations a fixed set of mutation operators proposes further
sequences.

Coverage counts both directions of every branch site (``require`` and
``if``), so a contract with ``n`` sites has ``2n`` directions.
"""

from __future__ import annotations

import json
import logging
import random
import time
from collections import Counter, deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .coreselect import CannedTransport, HttpTransport
from .dispatch import DispatchBackendError, Dispatcher, FingerprintCache, SolverConfig
from .ir import make_goal_formula
from .minivm import ContractProgram, TxInput, execute_sequence, load_contract
from .solver import make_backend
from .symexec import collect_path
from .syntax import canonical_text

log = logging.getLogger(__name__)

COVERAGE_NOTE = "Cov% = covered branch directions / (2 x branch sites); require and if sites both count"
TIMING_FIELDS = ("avg", "p99", "solver_time", "elapsed")
ENV_JITTER = ("timestamp", "blocknumber", "callvalue", "sender")


@dataclass
class CampaignConfig:
    contracts: Sequence = ()  # paths or ContractProgram objects
    mode: str = "selective"
    budget: float = 60.0
    seed: int = 0
    width: int = 8
    t_short: float = 1.5
    t_neur: float = 5.0
    baseline_timeout: float = 60.0
    rounds: int = 4
    k_max: int = 8
    selector: str | Callable | None = None  # None | "canned:<dir>" | "http[:<url>]" | factory
    output: str | None = None
    backend: str = "enum"
    solver_bin: str | None = None
    max_iterations: int | None = None
    mutations: int = 8
    max_seq: int = 4
    workers: int = 1
    cache_dir: str | None = None
    full_fallback: bool = False

    def __post_init__(self):
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if not 1 <= self.width <= 64:
            raise ValueError("width must be within 1..64")
        if self.max_seq < 1 or self.workers < 1 or self.mutations < 0:
            raise ValueError("max_seq and workers must be positive, mutations non-negative")
        self.solver_config()  # validates the timeouts, R, K_max and mode

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            self.mode, self.t_short, self.t_neur, self.baseline_timeout, self.rounds, self.k_max, self.full_fallback
        )


def make_selector(choice):
    """Build a fresh selector transport; every worker gets its own."""
    if choice is None or choice in ("none", "heuristic"):
        return None
    if callable(choice):
        return choice()
    if choice.startswith("canned:"):
        return CannedTransport(choice[len("canned:"):])
    if choice == "http":
        return HttpTransport()
    if choice.startswith("http:"):
        return HttpTransport(choice[len("http:"):])
    raise ValueError(f"unknown selector {choice!r}")


# -- report ------------------------------------------------------------------


@dataclass
class ContractRecord:
    contract: str
    mode: str
    seed: int
    width: int
    covered: int
    total: int
    coverage: float
    bugs: list[int]
    calls: int
    avg: float
    p99: float
    solver_time: float
    selector_calls: int
    fallbacks: int
    rounds: dict[str, int]
    iterations: int
    corpus: int
    attempts: int
    accepted: int
    backend_errors: int
    reproducers: dict[str, list[dict]]
    timeline: list[list[int]]
    elapsed: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class CampaignReport:
    records: list[ContractRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"coverage": COVERAGE_NOTE, "records": [r.to_dict() for r in self.records]}

    @classmethod
    def from_dict(cls, doc) -> "CampaignReport":
        return cls([ContractRecord(**r) for r in doc.get("records", [])])

    def deterministic(self) -> list[dict]:
        """Records without wall-clock fields."""
        return [{k: v for k, v in r.to_dict().items() if k not in TIMING_FIELDS} for r in self.records]

    def record(self, contract: str) -> ContractRecord:
        for r in self.records:
            if r.contract == contract:
                return r
        raise KeyError(contract)


COLUMNS = (
    ("Contract", "contract", "<"),
    ("Config", "mode", "<"),
    ("Cov%", "coverage", ">"),
    ("#Bugs", "bugs", ">"),
    ("#Calls", "calls", ">"),
    ("Avg (s)", "avg", ">"),
    ("P99 (s)", "p99", ">"),
    ("#Sel", "selector_calls", ">"),
    ("#Fallb", "fallbacks", ">"),
)


def _cell(key, value) -> str:
    if key == "coverage":
        return f"{value:.2f}"
    if key in ("avg", "p99"):
        return f"{value:.3f}"
    if key == "bugs":
        return str(len(value))
    return str(value)


def format_table(report: CampaignReport) -> str:
    rows = [[_cell(key, getattr(r, key)) for _, key, _ in COLUMNS] for r in report.records]
    widths = [max([len(h)] + [len(row[i]) for row in rows]) for i, (h, _, _) in enumerate(COLUMNS)]

    def line(cells):
        out = []
        for (_, _, align), w, c in zip(COLUMNS, widths, cells):
            out.append(c.ljust(w) if align == "<" else c.rjust(w))
        return "  ".join(out).rstrip()

    lines = [f"# {COVERAGE_NOTE}", line([h for h, _, _ in COLUMNS])]
    lines += [line(row) for row in rows]
    return "\n".join(lines) + "\n"


def format_machine(report: CampaignReport) -> str:
    return json.dumps(report.to_dict(), indent=1) + "\n"


def write_report(report: CampaignReport, path, format: str = "both") -> list[Path]:
    """Write ``path`` (machine JSON) and/or ``path`` with a ``.txt`` suffix (table).

    ``format`` is ``machine``, ``table`` or ``both``.
    """
    if format not in ("machine", "table", "both"):
        raise ValueError(f"unknown report format {format!r}")
    base = Path(path)
    out = []
    try:
        if format in ("machine", "both"):
            target = base if format == "machine" or base.suffix == ".json" else base.with_suffix(".json")
            target.write_text(format_machine(report))
            out.append(target)
        if format in ("table", "both"):
            target = base if format == "table" else base.with_suffix(".txt")
            target.write_text(format_table(report))
            out.append(target)
    except OSError as e:
        raise OSError(f"cannot write report to {path}: {e}") from e
    return out


# -- mutation ----------------------------------------------------------------


def interesting(width: int) -> list[int]:
    mask = (1 << width) - 1
    vals = {0, 1, 2, 16, 32, 64, 100, 127, 128, 255, 256, 1000, mask, mask - 1, 1 << (width - 1), (1 << (width - 1)) - 1}
    return sorted({v & mask for v in vals})


class Mutator:
    """Fixed operator set: bit flip, +-1/+-16, interesting constants, env jitter, append/drop."""

    OPS = ("bitflip", "arith", "interesting", "env", "append", "drop")

    def __init__(self, p: ContractProgram, rng: random.Random, width: int, max_seq: int):
        self.p, self.rng, self.width, self.max_seq = p, rng, width, max_seq
        self.mask = (1 << width) - 1
        self.consts = interesting(width)

    def zero_tx(self, f) -> TxInput:
        return TxInput.make(f.selector, (0,) * len(f.params))

    def mutate(self, seq: tuple[TxInput, ...]) -> tuple[TxInput, ...]:
        rng = self.rng
        op = rng.choice(self.OPS)
        if op == "append":
            if len(seq) < self.max_seq:
                return seq + (self.zero_tx(rng.choice(self.p.functions)),)
            op = "arith"
        if op == "drop":
            if len(seq) > 1:
                i = rng.randrange(len(seq))
                return seq[:i] + seq[i + 1:]
            op = "bitflip"
        i = len(seq) - 1 if rng.random() < 0.7 else rng.randrange(len(seq))
        tx = seq[i]
        if op == "env" or not tx.args:
            env = tx.env_dict
            k = rng.choice(ENV_JITTER)
            env[k] = (env[k] + rng.choice((-256, -16, -1, 1, 16, 256))) % (1 << 64)
            new = TxInput.make(tx.selector, tx.args, **env)
        else:
            args = list(tx.args)
            j = rng.randrange(len(args))
            if op == "bitflip":
                args[j] ^= 1 << rng.randrange(self.width)
            elif op == "arith":
                args[j] = (args[j] + rng.choice((-16, -1, 1, 16))) & self.mask
            else:
                args[j] = rng.choice(self.consts)
            new = TxInput.make(tx.selector, tuple(args), **tx.env_dict)
        return seq[:i] + (new,) + seq[i + 1:]


# -- campaign ----------------------------------------------------------------


def _goal_key(g) -> tuple:
    return (g.goal.site, g.goal.direction, g.function, tuple(canonical_text(c) for c in g.constraints), g.fixed)


class _Worker:
    def __init__(self, p: ContractProgram, cfg: CampaignConfig):
        self.p, self.cfg = p, cfg
        self.width = cfg.width
        seed_text = f"{cfg.seed}|{p.name}|{cfg.mode}"
        self.rng = random.Random(seed_text)
        self.mutator = Mutator(p, self.rng, cfg.width, cfg.max_seq)
        self.cache_path = Path(cfg.cache_dir) / f"{p.name}.cache.json" if cfg.cache_dir else None
        cache = FingerprintCache.load(self.cache_path, p.digest()) if self.cache_path else FingerprintCache(p.digest())
        self.dispatcher = Dispatcher(
            cfg.solver_config(), make_backend(cfg.backend, cfg.solver_bin), make_selector(cfg.selector), cache
        )
        self.sites = p.sites()
        self.covered: set[tuple[int, bool]] = set()
        self.corpus: list[tuple[TxInput, ...]] = []
        self.seen: set[tuple[TxInput, ...]] = set()
        self.pending: deque = deque()
        self.deferred: deque = deque()
        self.reproducers: dict[int, tuple[TxInput, ...]] = {}
        self.attempted: set[tuple] = set()
        self.attempts = self.accepted = self.backend_errors = self.iterations = 0
        self.timeline: list[list[int]] = []

    @property
    def total(self) -> int:
        return 2 * len(self.sites)

    def run_seq(self, seq) -> bool:
        """Execute and account; True when new coverage was reached."""
        traces, _ = execute_sequence(self.p, seq, None, self.width)
        before = len(self.covered)
        for i, tr in enumerate(traces):
            self.covered.update(tr.steps)
            for b in tr.bugs:
                self.reproducers.setdefault(b, tuple(seq[: i + 1]))
        return len(self.covered) > before

    def admit(self, seq) -> None:
        if seq in self.seen:
            return
        self.seen.add(seq)
        self.corpus.append(seq)
        self.pending.append(seq)

    def done(self) -> bool:
        if len(self.covered) >= self.total:
            return True
        if self.cfg.max_iterations is not None and self.iterations >= self.cfg.max_iterations:
            return True
        return time.perf_counter() >= self.deadline

    def explore(self, seq) -> None:
        prefix, tx = seq[:-1], seq[-1]
        _, state = execute_sequence(self.p, prefix, None, self.width)
        # deepest direction first; once one is flipped the new seed is explored
        # before the rest of this path, which waits in the deferred queue
        goals = [(prefix, state, pc, goal) for pc, goal in reversed(collect_path(self.p, tx, state, self.width))]
        for i, item in enumerate(goals):
            if self.done():
                return
            if self.attempt(item):
                self.deferred.extend(goals[i + 1:])
                return

    def attempt(self, item) -> bool:
        prefix, state, pc, goal = item
        if (goal.site, goal.direction) in self.covered:
            return False
        g = make_goal_formula(pc, goal)
        key = _goal_key(g)
        if key in self.attempted:
            return False
        self.attempted.add(key)
        self.attempts += 1
        try:
            res = self.dispatcher.solve(g, self.p, state)
        except DispatchBackendError as e:
            self.backend_errors += 1
            log.warning("%s: backend failure on goal %s: %s", self.p.name, goal, e)
            return False
        if not res.accepted:
            return False
        self.accepted += 1
        new = prefix + (res.input,)
        self.run_seq(new)
        self.admit(new)
        return True

    def run(self) -> ContractRecord:
        start = time.perf_counter()
        self.deadline = start + self.cfg.budget
        for f in self.p.functions:
            seq = (self.mutator.zero_tx(f),)
            self.run_seq(seq)
            self.admit(seq)
        self.timeline.append([0, len(self.covered)])
        while not self.done():
            if self.pending:
                self.explore(self.pending.popleft())
            elif self.deferred:
                self.attempt(self.deferred.popleft())
            for _ in range(self.cfg.mutations):
                if self.done():
                    break
                seq = self.mutator.mutate(self.rng.choice(self.corpus))
                if seq not in self.seen and self.run_seq(seq):
                    self.admit(seq)
            self.iterations += 1
            self.timeline.append([self.iterations, len(self.covered)])
        if self.cache_path is not None:
            self.dispatcher.cache.save(self.cache_path)
        return self.record(time.perf_counter() - start)

    def record(self, elapsed: float) -> ContractRecord:
        d, stats = self.dispatcher, self.dispatcher.stats
        return ContractRecord(
            contract=self.p.name,
            mode=self.cfg.mode,
            seed=self.cfg.seed,
            width=self.width,
            covered=len(self.covered),
            total=self.total,
            coverage=round(100.0 * len(self.covered) / self.total, 4) if self.total else 100.0,
            bugs=sorted(self.reproducers),
            calls=stats.count,
            avg=stats.mean,
            p99=stats.p99,
            solver_time=stats.total_time,
            selector_calls=d.selector_calls,
            fallbacks=d.fallbacks,
            rounds={str(k): v for k, v in sorted(d.rounds_histogram.items())},
            iterations=self.iterations,
            corpus=len(self.corpus),
            attempts=self.attempts,
            accepted=self.accepted,
            backend_errors=self.backend_errors,
            reproducers={str(b): [tx.to_json() for tx in seq] for b, seq in sorted(self.reproducers.items())},
            timeline=self.timeline,
            elapsed=elapsed,
        )


def _resolve(contract) -> ContractProgram:
    return contract if isinstance(contract, ContractProgram) else load_contract(contract)


def run_campaign(cfg: CampaignConfig) -> CampaignReport:
    programs = [_resolve(c) for c in cfg.contracts]  # parse errors surface before any work
    names = Counter(p.name for p in programs)
    if any(n > 1 for n in names.values()):
        raise ValueError("contract names must be unique within a campaign")

    def work(p):
        return _Worker(p, cfg).run()

    if cfg.workers > 1 and len(programs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(work, programs))
    else:
        records = [work(p) for p in programs]
    report = CampaignReport(records)
    if cfg.output:
        write_report(report, cfg.output)
    return report


def replay_bug(p: ContractProgram, reproducer: Sequence[dict], bug: int, width: int) -> bool:
    """True when the stored sequence hits ``bug`` on a fresh deployment."""
    txs = [TxInput.from_json(d) for d in reproducer]
    traces, _ = execute_sequence(p, txs, None, width)
    return any(bug in t.bugs for t in traces)


__all__ = [
    "COVERAGE_NOTE",
    "CampaignConfig",
    "CampaignReport",
    "ContractRecord",
    "Mutator",
    "format_machine",
    "format_table",
    "make_selector",
    "replay_bug",
    "run_campaign",
    "write_report",
]
