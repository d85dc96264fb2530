"""Deterministic generators for polluted-guard benchmark contracts.

Families:

* ``deep-timelock``: one bug-guarded branch behind ``noise`` timelock, flag
  and unrelated-storage requires plus a ``depth``-constraint arithmetic core.
  Three of the timelock windows (when ``noise >= 12``) exclude the default
  timestamp, so a model that ignores them diverges and must be refined.
* ``multi-step-puzzle``: ``depth`` stage functions that each need a magic
  argument behind polluted prefixes before the final bug becomes reachable.
* ``easy-token``: shallow require chains without noise.

``random_program`` builds small unstructured contracts for property tests.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .ir import ENV_VARS
from .minivm import DEFAULT_ENV, Advance, Bug, ContractProgram, Function, If, Require, Store
from .syntax import parse_expr, parse_pred

FAMILIES = ("deep-timelock", "multi-step-puzzle", "easy-token")
MAX_NOISE = 200
MAX_DEPTH = 8


@dataclass(frozen=True)
class SyntheticSpec:
    family: str
    noise: int = 0
    depth: int = 1
    seed: int = 0
    width: int = 8

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if not 0 <= self.noise <= MAX_NOISE:
            raise ValueError(f"noise must be within 0..{MAX_NOISE}")
        if not 1 <= self.depth <= MAX_DEPTH:
            raise ValueError(f"depth must be within 1..{MAX_DEPTH}")
        if self.width < 4:
            raise ValueError("width must be at least 4 bits")


class _Sites:
    def __init__(self):
        self.n = 0

    def __call__(self) -> int:
        self.n += 1
        return self.n


def _req(text, sites):
    return Require(parse_pred(text), sites())


def _defaults(width):
    mask = (1 << width) - 1
    return {k: v & mask for k, v in DEFAULT_ENV.items()}


def _popcount(v):
    return bin(v).count("1")


def _magic(rng, mask, width):
    """An argument value hard to reach by small mutations, and a guard that pins it."""
    while True:
        x = rng.randrange(mask // 2 + 1, mask)
        if _popcount(x) >= max(3, width // 2 - 1) and x not in (mask, mask - 1):
            break
    m = rng.randrange(3, mask, 2)
    c = rng.randrange(1, mask)
    k = ((x * m) + c) & mask
    return x, f"((a * {m}) + {c}) == {k}"


def _noise_pool(rng, width, n, slots, storage, kinds=("ts", "bn", "arith", "arith", "flag", "store")):
    """Requires that hold at the default env and for every timestamp below the default."""
    mask = (1 << width) - 1
    d = _defaults(width)
    dts, dbn = d["timestamp"], d["blocknumber"]
    out = []
    for _ in range(n):
        kind = rng.choice(kinds)
        if kind == "ts":
            if dts < mask and rng.random() < 0.5:
                out.append(f"timestamp < {rng.randint(dts + 1, mask)}")
            else:
                out.append(f"timestamp <= {rng.randint(dts, mask)}")
        elif kind == "bn":
            r = rng.random()
            if r < 0.3:
                out.append(f"blocknumber >= {rng.randint(0, dbn)}")
            elif r < 0.6:
                out.append(f"blocknumber <= {rng.randint(dbn, mask)}")
            else:
                v = rng.randrange(0, mask)
                out.append(f"blocknumber != {v if v != dbn else (v + 1) & mask}")
        elif kind == "arith":
            # nonlinear mixing of the block number with storage; false only on a thin slice
            slot = slots.pop(0) if slots else rng.randrange(100, 120)
            storage.setdefault(slot, rng.randrange(1, mask))
            m, p = rng.randrange(3, 16, 2), rng.randrange(11, 31)
            val = ((((dbn * m) & mask) ^ storage[slot]) + ((dbn * dbn) & mask)) & mask
            r = (val % p + rng.randrange(1, p)) % p
            out.append(f"((((blocknumber * {m}) ^ S[{slot}]) + (blocknumber * blocknumber)) % {p}) != {r}")
        else:
            slot = slots.pop(0) if slots else rng.randrange(100, 120)
            if kind == "flag":
                storage.setdefault(slot, 0)
                out.append(f"S[{slot}] == 0" if storage[slot] == 0 else f"S[{slot}] != 0")
            else:
                storage.setdefault(slot, rng.randrange(1, mask))
                out.append(f"S[{slot}] == {storage[slot]}" if rng.random() < 0.6 else f"S[{slot}] >= {rng.randint(1, storage[slot])}")
    return out


def _necessary_windows(width):
    dts = _defaults(width)["timestamp"]
    hi, lo = (dts * 3) // 4, dts // 4
    return [f"timestamp <= {hi}", f"timestamp >= {lo}", "(timestamp & 3) == 3"]


def _core_constraints(rng, x_star, width, n):
    mask = (1 << width) - 1
    out = []
    for _ in range(n):
        r = rng.random()
        if r < 0.35:
            out.append(f"a <= {rng.randint(x_star, mask)}")
        elif r < 0.65:
            v = rng.randrange(1, mask)
            while v == x_star:
                v = rng.randrange(1, mask)
            out.append(f"a != {v}")
        else:
            p = rng.randrange(3, 8)
            bad = {0, x_star % p}
            r_ = next(i for i in range(p) if i not in bad)
            out.append(f"(a % {p}) != {r_}")
    return out


def _deep_timelock(spec: SyntheticSpec, rng) -> ContractProgram:
    mask = (1 << spec.width) - 1
    storage: dict[int, int] = {}
    x_star, guard = _magic(rng, mask, spec.width)
    need = _necessary_windows(spec.width) if spec.noise >= 12 else []
    n_free = spec.noise - len(need)
    # the stretch closest to the guard only reads storage
    tail = min(12, n_free)
    slots = list(range(1, spec.noise + 1))
    head = _noise_pool(rng, spec.width, n_free - tail, slots, storage)
    tail_noise = _noise_pool(rng, spec.width, tail, slots, storage, kinds=("flag", "store"))
    # necessary windows go into the first half of the head, in order
    positions = sorted(rng.sample(range(len(head) // 2 + 1), len(need))) if need else []
    for offset, (pos, text) in enumerate(zip(positions, need)):
        head.insert(pos + offset, text)
    noise = head + tail_noise
    core = _core_constraints(rng, x_star, spec.width, spec.depth)
    texts = list(noise)
    for c in core:
        texts.insert(rng.randint(0, len(texts)), c)
    sites = _Sites()
    body = [_req(t, sites) for t in texts]
    body.append(If(parse_pred(guard), sites(), (Bug(1),), ()))
    fn = Function("unlock", 0x10, ("a",), tuple(body))
    return ContractProgram(f"DeepTimelock_n{spec.noise}_d{spec.depth}_s{spec.seed}", tuple(sorted(storage.items())), (fn,))


def _multi_step(spec: SyntheticSpec, rng) -> ContractProgram:
    mask = (1 << spec.width) - 1
    storage: dict[int, int] = {0: 0}
    sites = _Sites()
    per = spec.noise // (spec.depth + 1)
    extra = spec.noise - per * (spec.depth + 1)
    slots = list(range(10, 10 + spec.noise + 1))
    functions = []
    for i in range(1, spec.depth + 2):
        n_noise = per + (extra if i == spec.depth + 1 else 0)
        head = _noise_pool(rng, spec.width, max(0, n_noise - min(12, n_noise)), slots, storage)
        tail = _noise_pool(rng, spec.width, min(12, n_noise), slots, storage, kinds=("flag", "store"))
        _, magic = _magic(rng, mask, spec.width)
        body = [_req(f"S[0] == {i - 1}", sites)]
        body += [_req(t, sites) for t in head]
        shallow = rng.randrange(2, mask // 4)
        body.append(If(parse_pred(f"a > {shallow}"), sites(), (Store(1 + i % 5, parse_expr("a")),), ()))
        body += [_req(t, sites) for t in tail]
        if i <= spec.depth:
            body.append(Require(parse_pred(magic), sites()))
            body.append(Advance(0, parse_expr(str(i))))
            functions.append(Function(f"step{i}", 0x20 + i, ("a",), tuple(body)))
        else:
            body.append(If(parse_pred(magic), sites(), (Bug(1),), ()))
            body.append(If(parse_pred("(a & 15) == 7"), sites(), (Bug(2),), ()))
            functions.append(Function("claim", 0x40, ("a",), tuple(body)))
    return ContractProgram(
        f"MultiStepPuzzle_n{spec.noise}_d{spec.depth}_s{spec.seed}", tuple(sorted(storage.items())), tuple(functions)
    )


def _easy_token(spec: SyntheticSpec, rng) -> ContractProgram:
    mask = (1 << spec.width) - 1
    sites = _Sites()
    balance = rng.randrange(mask // 4, mask // 2)
    cap = rng.randrange(mask // 2, mask)
    chain = [_req("amount > 0", sites), _req("amount <= S[1]", sites)]
    for _ in range(spec.depth - 1):
        chain.append(_req(f"amount != {rng.randrange(1, balance + 1)}", sites))
    transfer = Function(
        "transfer",
        0x01,
        ("to", "amount"),
        tuple(chain)
        + (
            Store(1, parse_expr("S[1] - amount")),
            Store(2, parse_expr("S[2] + amount")),
            If(parse_pred("to == 0"), sites(), (Bug(1),), ()),
        ),
    )
    mint = Function(
        "mint",
        0x02,
        ("value",),
        (
            _req("sender == 1", sites),
            If(parse_pred(f"(S[1] + value) < S[1]"), sites(), (Bug(2),), (Store(1, parse_expr("S[1] + value")),)),
            If(parse_pred(f"value > {cap}"), sites(), (Store(3, parse_expr("value")),), ()),
        ),
    )
    magic = rng.randrange(1, mask)
    approve = Function(
        "approve",
        0x03,
        ("spender", "value"),
        (
            _req("spender != 0", sites),
            If(parse_pred(f"value == {magic}"), sites(), (Store(4, parse_expr("spender")),), ()),
        ),
    )
    return ContractProgram(f"EasyToken_d{spec.depth}_s{spec.seed}", ((1, balance), (2, 0)), (transfer, mint, approve))


def generate_synthetic(spec: SyntheticSpec) -> ContractProgram:
    rng = random.Random(f"{spec.family}|{spec.noise}|{spec.depth}|{spec.seed}|{spec.width}")
    if spec.family == "deep-timelock":
        return _deep_timelock(spec, rng)
    if spec.family == "multi-step-puzzle":
        return _multi_step(spec, rng)
    return _easy_token(spec, rng)


# -- random programs for property suites -------------------------------------


def _rand_expr(rng, names, width, depth=0):
    mask = (1 << width) - 1
    r = rng.random()
    if depth >= 2 or r < 0.35:
        return rng.choice(names)
    if r < 0.45:
        return str(rng.randrange(0, mask + 1))
    op = rng.choice(["+", "-", "*", "/", "%", "&", "|", "^", "<<", ">>"])
    right = str(rng.randrange(0, 8)) if op in ("<<", ">>") else _rand_expr(rng, names, width, depth + 1)
    return f"({_rand_expr(rng, names, width, depth + 1)} {op} {right})"


def _rand_pred(rng, names, width):
    mask = (1 << width) - 1
    cmp = rng.choice(["==", "!=", "<", "<=", ">", ">="])
    text = f"{_rand_expr(rng, names, width)} {cmp} {rng.randrange(0, mask + 1)}"
    if rng.random() < 0.15:
        other = f"{rng.choice(names)} {rng.choice(['<', '>', '!='])} {rng.randrange(0, mask + 1)}"
        text = f"({text}) {rng.choice(['&&', '||'])} ({other})"
    if rng.random() < 0.1:
        text = f"!({text})"
    return text


def random_program(seed: int, width: int = 8, max_stmts: int = 7) -> ContractProgram:
    """A small loop-free contract over at most three free names."""
    rng = random.Random(f"random|{seed}|{width}")
    n_args = rng.choice([1, 1, 2, 2, 3])
    params = ["a", "b", "c"][:n_args]
    names = list(params)
    if n_args < 3 and rng.random() < 0.4:
        names.append(rng.choice(sorted(ENV_VARS)))
    slots = [1, 2]
    storage = {s: rng.randrange(0, 1 << width) for s in slots}
    sites = _Sites()
    bug_ids = iter(range(1, 100))

    def block(depth, budget):
        out = []
        for _ in range(rng.randint(1, budget)):
            r = rng.random()
            readable = names + [f"S[{s}]" for s in slots]
            if r < 0.3:
                out.append(Require(parse_pred(_rand_pred(rng, readable, width)), sites()))
            elif r < 0.6 and depth < 2:
                pred = parse_pred(_rand_pred(rng, readable, width))
                site = sites()
                out.append(If(pred, site, tuple(block(depth + 1, 2)), tuple(block(depth + 1, 2)) if rng.random() < 0.5 else ()))
            elif r < 0.8:
                cls = Store if rng.random() < 0.7 else Advance
                out.append(cls(rng.choice(slots), parse_expr(_rand_expr(rng, readable, width))))
            else:
                out.append(Bug(next(bug_ids)))
        return out

    body = block(0, max_stmts)
    if not any(isinstance(s, (If, Require)) for s in body):
        body.append(If(parse_pred(_rand_pred(rng, names, width)), sites(), (Bug(next(bug_ids)),), ()))
    fn = Function("f", 0x01, tuple(params), tuple(body))
    return ContractProgram(f"Random_{seed}", tuple(sorted(storage.items())), (fn,))
