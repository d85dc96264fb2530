"""A loop-free miniature contract VM with branch instrumentation.

Programs are made of ``require``/``if`` branch sites, storage writes and
``bug(id)`` oracles.  ``execute`` is a pure function of (program, tx, state)
and returns the branch trace plus the post-state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Union

from .ir import ENV_VARS, BranchGoal, GoalFormula, evaluate, storage_name
from .syntax import ParseError, canonical_text, parse_expr, parse_pred

SCHEMA = "minivm-v1"

DEFAULT_ENV = {"timestamp": 1_000_000, "sender": 0x1, "callvalue": 0, "blocknumber": 1_000}


class ContractError(ValueError):
    """Malformed contract document."""


class DispatchError(LookupError):
    pass


class InputError(ValueError):
    pass


# -- program structure -------------------------------------------------------


@dataclass(frozen=True)
class Require:
    pred: object
    site: int


@dataclass(frozen=True)
class If:
    pred: object
    site: int
    then: tuple = ()
    orelse: tuple = ()


@dataclass(frozen=True)
class Store:
    slot: int
    value: object


@dataclass(frozen=True)
class Advance:
    """Stage transition ``S[slot] := value``; same semantics as ``Store``."""

    slot: int
    value: object


@dataclass(frozen=True)
class Bug:
    id: int


Stmt = Union[Require, If, Store, Advance, Bug]


@dataclass(frozen=True)
class Function:
    name: str
    selector: int
    params: tuple[str, ...]
    body: tuple[Stmt, ...]


@dataclass(frozen=True)
class ContractProgram:
    name: str
    storage: tuple[tuple[int, int], ...]
    functions: tuple[Function, ...]

    def function(self, key: int | str) -> Function:
        for f in self.functions:
            if f.selector == key or f.name == key:
                return f
        raise DispatchError(f"{self.name}: no function with selector {key!r}")

    def initial_storage(self) -> dict[int, int]:
        return dict(self.storage)

    def sites(self) -> list[int]:
        return [s.site for _, s in iter_branches(self)]

    def site_function(self, site: int) -> Function:
        for f, s in iter_branches(self):
            if s.site == site:
                return f
        raise KeyError(site)

    def digest(self) -> str:
        return hashlib.sha256(dumps_contract(self).encode()).hexdigest()


def iter_statements(body) -> Iterator[Stmt]:
    for s in body:
        yield s
        if isinstance(s, If):
            yield from iter_statements(s.then)
            yield from iter_statements(s.orelse)


def iter_branches(p: ContractProgram) -> Iterator[tuple[Function, Stmt]]:
    for f in p.functions:
        for s in iter_statements(f.body):
            if isinstance(s, (Require, If)):
                yield f, s


# -- transactions and traces -------------------------------------------------


@dataclass(frozen=True)
class TxInput:
    selector: int
    args: tuple[int, ...] = ()
    env: tuple[tuple[str, int], ...] = ()

    @classmethod
    def make(cls, selector: int, args=(), **env) -> "TxInput":
        full = dict(DEFAULT_ENV)
        for k, v in env.items():
            if k not in ENV_VARS:
                raise InputError(f"unknown env field {k!r}")
            full[k] = v
        return cls(selector, tuple(args), tuple(sorted(full.items())))

    @property
    def env_dict(self) -> dict[str, int]:
        out = dict(DEFAULT_ENV)
        out.update(self.env)
        return out

    def to_json(self) -> dict:
        return {"selector": self.selector, "args": list(self.args), "env": self.env_dict}

    @classmethod
    def from_json(cls, d: Mapping) -> "TxInput":
        extra = set(d) - {"selector", "args", "env"}
        if extra or "selector" not in d:
            raise InputError(f"transaction needs 'selector' and takes only 'args' and 'env', got {sorted(d)}")
        return cls.make(d["selector"], d.get("args", ()), **d.get("env", {}))


@dataclass(frozen=True)
class BranchTrace:
    steps: tuple[tuple[int, bool], ...]
    status: str  # "completed" | "reverted"
    revert_site: int | None = None
    bugs: tuple[int, ...] = ()

    @property
    def terminal(self) -> str:
        if self.status == "reverted":
            return f"reverted-at-site({self.revert_site})"
        if self.bugs:
            return "bug-hit(" + ",".join(map(str, self.bugs)) + ")"
        return "completed"


def tx_env(p: ContractProgram, tx: TxInput, state: Mapping[int, int]) -> tuple[Function, dict]:
    f = p.function(tx.selector)
    if len(tx.args) != len(f.params):
        raise InputError(f"{f.name} takes {len(f.params)} argument(s), got {len(tx.args)}")
    env = tx.env_dict
    env.update(zip(f.params, tx.args))
    return f, env


def execute(p: ContractProgram, tx: TxInput, state: Mapping[int, int] | None = None, width: int = 64):
    """Run one transaction; return ``(trace, post_state)``.

    A failing ``require`` ends the trace and rolls storage back to ``state``.
    """
    if state is None:
        state = p.initial_storage()
    f, env = tx_env(p, tx, state)
    store = dict(state)
    steps: list[tuple[int, bool]] = []
    bugs: list[int] = []

    def lookup():
        scope = dict(env)
        for slot, v in store.items():
            scope[storage_name(slot)] = v
        return scope

    def read_all(node):
        # absent slots read as zero
        scope = lookup()
        return evaluate(node, _ZeroStorage(scope), width)

    def run(body) -> int | None:
        for s in body:
            if isinstance(s, Require):
                ok = read_all(s.pred)
                steps.append((s.site, ok))
                if not ok:
                    return s.site
            elif isinstance(s, If):
                ok = read_all(s.pred)
                steps.append((s.site, ok))
                site = run(s.then if ok else s.orelse)
                if site is not None:
                    return site
            elif isinstance(s, (Store, Advance)):
                store[s.slot] = read_all(s.value)
            elif isinstance(s, Bug):
                if s.id not in bugs:
                    bugs.append(s.id)
        return None

    revert = run(f.body)
    if revert is not None:
        return BranchTrace(tuple(steps), "reverted", revert, tuple(bugs)), dict(state)
    return BranchTrace(tuple(steps), "completed", None, tuple(bugs)), store


class _ZeroStorage(dict):
    def __missing__(self, key):
        if key.startswith("S["):
            return 0
        raise KeyError(key)


def execute_sequence(p: ContractProgram, txs, state=None, width: int = 64):
    """Thread storage through several transactions; return traces and final state."""
    state = p.initial_storage() if state is None else dict(state)
    traces = []
    for tx in txs:
        trace, state = execute(p, tx, state, width)
        traces.append(trace)
    return traces, state


def reaches_goal(trace: BranchTrace, goal: BranchGoal) -> bool:
    return (goal.site, goal.direction) in trace.steps


def consistent_with_path(trace: BranchTrace, g: GoalFormula) -> tuple[bool, int | None]:
    """Compare ``trace`` to the symbolic path of ``g``; report the first divergent site.

    A trace that stops early (revert) diverges at its last recorded site.
    """
    for i, (site, direction) in enumerate(g.path):
        if i >= len(trace.steps):
            last = trace.steps[-1][0] if trace.steps else site
            return False, last
        if trace.steps[i] != (site, direction):
            return False, site if trace.steps[i][0] == site else trace.steps[i][0]
    return True, None


# -- contract files ----------------------------------------------------------


def _load_body(items, counter, explicit) -> tuple[Stmt, ...]:
    out = []
    for item in items:
        if not isinstance(item, dict) or not item:
            raise ContractError(f"statement must be an object: {item!r}")
        try:
            if "require" in item or "if" in item:
                if explicit:
                    if "site" not in item:
                        raise ContractError("either all branch statements carry 'site' or none do")
                    site = int(item["site"])
                else:
                    counter[0] += 1
                    site = counter[0]
                if "require" in item:
                    out.append(Require(parse_pred(item["require"]), site))
                else:
                    out.append(
                        If(
                            parse_pred(item["if"]),
                            site,
                            _load_body(item.get("then", []), counter, explicit),
                            _load_body(item.get("else", []), counter, explicit),
                        )
                    )
            elif "store" in item:
                out.append(Store(int(item["store"]), parse_expr(str(item["value"]))))
            elif "advance" in item:
                out.append(Advance(int(item["advance"]), parse_expr(str(item["value"]))))
            elif "bug" in item:
                out.append(Bug(int(item["bug"])))
            else:
                raise ContractError(f"unknown statement {item!r}")
        except ParseError as e:
            raise ContractError(f"bad expression in {item!r}: {e}") from e
    return tuple(out)


def _has_explicit_sites(items) -> bool:
    for item in items:
        if isinstance(item, dict):
            if "site" in item:
                return True
            if _has_explicit_sites(item.get("then", [])) or _has_explicit_sites(item.get("else", [])):
                return True
    return False


def contract_from_dict(doc: Mapping) -> ContractProgram:
    if doc.get("schema") != SCHEMA:
        raise ContractError(f"schema must be {SCHEMA!r}, got {doc.get('schema')!r}")
    for key in ("name", "functions"):
        if key not in doc:
            raise ContractError(f"missing field {key!r}")
    if not isinstance(doc["functions"], list) or not doc["functions"]:
        raise ContractError("a contract needs at least one function")
    explicit = any(_has_explicit_sites(f.get("body", [])) for f in doc["functions"])
    counter = [0]
    functions = []
    for fd in doc["functions"]:
        params = []
        for prm in fd.get("params", []):
            name = prm["name"] if isinstance(prm, dict) else prm
            if isinstance(prm, dict) and prm.get("type", "uint") != "uint":
                raise ContractError(f"unsupported param type {prm['type']!r}")
            if name in ENV_VARS or name == "S":
                raise ContractError(f"param name {name!r} is reserved")
            params.append(name)
        functions.append(
            Function(fd["name"], int(fd["selector"]), tuple(params), _load_body(fd.get("body", []), counter, explicit))
        )
    selectors = [f.selector for f in functions]
    if len(set(selectors)) != len(selectors):
        raise ContractError("duplicate selectors")
    storage = tuple(sorted((int(k), int(v)) for k, v in doc.get("storage", {}).items()))
    p = ContractProgram(doc["name"], storage, tuple(functions))
    sites = p.sites()
    if len(set(sites)) != len(sites):
        raise ContractError("branch site ids must be unique")
    return p


def _dump_body(body) -> list:
    out = []
    for s in body:
        if isinstance(s, Require):
            out.append({"require": canonical_text(s.pred), "site": s.site})
        elif isinstance(s, If):
            d = {"if": canonical_text(s.pred), "site": s.site, "then": _dump_body(s.then)}
            if s.orelse:
                d["else"] = _dump_body(s.orelse)
            out.append(d)
        elif isinstance(s, Store):
            out.append({"store": s.slot, "value": canonical_text(s.value)})
        elif isinstance(s, Advance):
            out.append({"advance": s.slot, "value": canonical_text(s.value)})
        elif isinstance(s, Bug):
            out.append({"bug": s.id})
    return out


def contract_to_dict(p: ContractProgram) -> dict:
    return {
        "schema": SCHEMA,
        "name": p.name,
        "storage": {str(k): v for k, v in p.storage},
        "functions": [
            {
                "name": f.name,
                "selector": f.selector,
                "params": [{"name": n, "type": "uint"} for n in f.params],
                "body": _dump_body(f.body),
            }
            for f in p.functions
        ],
    }


def dumps_contract(p: ContractProgram) -> str:
    return json.dumps(contract_to_dict(p), indent=2, sort_keys=False) + "\n"


def loads_contract(text: str) -> ContractProgram:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ContractError(f"not a JSON document: {e}") from e
    return contract_from_dict(doc)


def load_contract(path) -> ContractProgram:
    return loads_contract(Path(path).read_text())


def save_contract(p: ContractProgram, path) -> None:
    Path(path).write_text(dumps_contract(p))
