import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import golden
from neurosca.anchoring import AnchoredSplit, anchored_decompose
from neurosca.coreselect import (
    CannedTransport,
    HttpTransport,
    ResponseFormatError,
    SelectionRequest,
    SelectionResponse,
    build_prompt,
    build_psi0,
    heuristic_fallback,
    parse_response,
    select_core,
    validate,
)
from neurosca.ir import BranchGoal, Constraint, make_goal_formula
from neurosca.minivm import SCHEMA, TxInput, contract_from_dict
from neurosca.refine import refine_loop
from neurosca.solver import EnumerationBackend
from neurosca.solver.enumeration import sat_mask
from neurosca.symexec import collect_path
from neurosca.synthetic import random_program
from neurosca.syntax import parse_pred


def split_with(ids, kinds=None):
    soft = tuple(Constraint(i, parse_pred(f"timestamp > {i}"), kind=(kinds or {}).get(i, "timelock"), width=8, site=i) for i in ids)
    guard = Constraint(max(ids) + 1, parse_pred("!(a == 7)"), kind="guard-dep", width=8, site=max(ids) + 1)
    return AnchoredSplit((), soft, guard)


def test_validate_pass_through():
    r = validate([4, 7], [9, 7, 4, 2], [2, 4, 7, 9], 8)
    assert r.core_indices == (4, 7)
    assert r.ranking == (9, 7, 4, 2)


def test_validate_dedup_and_range():
    r = validate([4, 4, 99], [], [2, 4, 7, 9], 8)
    assert r.core_indices == (4,)
    assert set(r.ranking) == {2, 4, 7, 9}
    assert validate([99, "x", True], [], [2, 4], 8) is None
    assert validate([2, 4, 7, 9], [], [2, 4, 7, 9], 2).core_indices == (2, 4)


def test_heuristic_examples():
    r = heuristic_fallback(split_with([2, 3, 5, 7, 8]), 3)
    assert r.core_indices == (5, 7, 8)
    assert r.ranking == (8, 7, 5, 3, 2)
    assert r.source == "heuristic" and r.fallback_used
    assert heuristic_fallback(split_with([4, 6]), 8).core_indices == (4, 6)
    with pytest.raises(ValueError):
        heuristic_fallback(split_with([1]), 0)


@given(st.sets(st.integers(1, 60), min_size=1, max_size=20), st.integers(1, 16))
def test_fallback_pure_and_validation_idempotent(ids, k):
    s = split_with(sorted(ids))
    a, b = heuristic_fallback(s, k), heuristic_fallback(s, k)
    assert a == b
    again = validate(a.core_indices, a.ranking, s.soft_ids, k, a.source)
    assert again == a


def test_prompt_example_line_and_keys():
    s = split_with([1])
    req = SelectionRequest.build(s, BranchGoal(2, True), "withdraw")
    system, user = build_prompt(req)
    assert 'id=1, expr="(timestamp > 1)", kind="timelock", vars=["timestamp"]' in user
    assert '{"core_indices": [...], "ranking": [...]}' in user
    assert "rank them by relevance" in system
    assert "<PC>" not in user and "program counter 2 in function withdraw" in user


def test_prompt_golden():
    s = split_with([2, 3, 5], {3: "global-flag"})
    system, user = build_prompt(SelectionRequest.build(s, BranchGoal(6, True), "unlock", 4))
    golden("prompt.txt", f"{system}\n---\n{user}")


def test_parse_response_forms():
    assert parse_response('{"core_indices": [1], "ranking": [1, 2]}') == ([1], [1, 2])
    assert parse_response('```json\n{"core_indices": [3], "ranking": []}\n```') == ([3], [])
    for bad in ["nope", '{"core_indices": [1]}', '{"core_indices": [1], "ranking": [], "x": 1}', '{"core_indices": 1, "ranking": []}', "[]"]:
        with pytest.raises(ResponseFormatError):
            parse_response(bad)


def test_select_core_with_canned_transport():
    s = split_with([2, 4, 7, 9])
    goal = BranchGoal(10, True)
    req = SelectionRequest.build(s, goal, "f")
    t = CannedTransport()
    t.add(req, {"core_indices": [4, 7], "ranking": [7, 4, 9, 2]})
    r = select_core(s, goal, t, 8, "f")
    assert (r.core_indices, r.source, t.calls) == ((4, 7), "selector", 1)
    # a different request misses the store and falls back
    r = select_core(s, goal, t, 8, "g")
    assert r.source == "heuristic"


def test_canned_directory(tmp_path):
    s = split_with([1, 2])
    goal = BranchGoal(3, True)
    req = SelectionRequest.build(s, goal, "f")
    (tmp_path / f"{req.fingerprint()}.json").write_text('{"core_indices": [2], "ranking": [2, 1]}')
    assert select_core(s, goal, CannedTransport(tmp_path), 8, "f").core_indices == (2,)


def test_bad_responses_fall_back():
    s = split_with([2, 4, 7, 9])
    goal = BranchGoal(10, True)
    req = SelectionRequest.build(s, goal, "f")
    for body in ["not json", '{"core_indices": [55], "ranking": []}', '{"core_indices": [2]}']:
        t = CannedTransport({req.fingerprint(): body})
        r = select_core(s, goal, t, 3, "f")
        assert r == heuristic_fallback(s, 3)


def test_empty_soft_never_queries():
    t = CannedTransport()
    s = AnchoredSplit((), (), Constraint(1, parse_pred("a == 1"), width=8))
    assert select_core(s, BranchGoal(1, True), t).source == "empty"
    assert t.calls == 0


class _Handler(BaseHTTPRequestHandler):
    bodies: list = []

    def do_POST(self):
        doc = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Handler.bodies.append((self.path, self.headers.get("Authorization"), doc))
        content = json.dumps({"core_indices": [4], "ranking": [4, 2]})
        out = json.dumps({"choices": [{"message": {"role": "assistant", "content": content}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)

    def log_message(self, *args):
        pass


def test_http_transport_round_trip():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        t = HttpTransport(f"http://127.0.0.1:{server.server_port}/v1", api_key="k-123", timeout=5)
        s = split_with([2, 4])
        r = select_core(s, BranchGoal(5, True), t)
        assert r.core_indices == (4,) and r.source == "selector"
        path, auth, doc = _Handler.bodies[-1]
        assert path == "/v1/chat/completions"
        assert auth == "Bearer k-123"
        assert doc["temperature"] == 0
        assert [m["role"] for m in doc["messages"]] == ["system", "user"]
    finally:
        server.shutdown()


def test_unreachable_endpoint_falls_back_after_retry():
    t = HttpTransport("http://127.0.0.1:9/v1", timeout=0.5, retries=1)
    s = split_with([2, 3, 5, 7, 8])
    r = select_core(s, BranchGoal(9, True), t, 3)
    assert r == heuristic_fallback(s, 3)
    assert t.calls == 2


def test_env_configuration(monkeypatch):
    monkeypatch.setenv("NEUROSCA_LLM_URL", "http://example.invalid/api/")
    monkeypatch.setenv("NEUROSCA_LLM_KEY", "secret")
    t = HttpTransport()
    assert t.base_url == "http://example.invalid/api" and t.api_key == "secret"


# -- initial abstraction -----------------------------------------------------


def test_psi0_empty_and_full():
    pc, goal = collect_path(random_program(3), TxInput.make(1, (5, 6, 7)[: len(random_program(3).functions[0].params)]), None, 8)[-1]
    g = make_goal_formula(pc, goal)
    split = anchored_decompose(g)
    empty = build_psi0(split, SelectionResponse((), (), "empty"))
    assert set(empty.constraints) == set(split.hard) | {g.negated}
    full = build_psi0(split, SelectionResponse(split.soft_ids, split.soft_ids))
    assert sorted(full.constraints, key=lambda c: c.id) == sorted(g.constraints, key=lambda c: c.id)
    assert len(full) == len(g)


def test_psi0_over_approximates():
    checked = 0
    for seed in range(400):
        p = random_program(seed)
        f = p.functions[0]
        seed_tx = TxInput.make(1, tuple((seed * 37 + 11 * i) % 256 for i in range(len(f.params))), timestamp=seed % 256)
        for pc, goal in collect_path(p, seed_tx, None, 8):
            g = make_goal_formula(pc, goal)
            names = sorted(set().union(*[c.vars for c in g.constraints]) - set(g.fixed_env))
            if len(names) > 2:
                continue
            split = anchored_decompose(g, p)
            for k in (1, 2):
                psi0 = build_psi0(split, heuristic_fallback(split, k) if split.soft else SelectionResponse((), (), "empty"))
                full = sat_mask(g.constraints, names, g.fixed_env)
                abst = sat_mask(psi0.constraints, names, g.fixed_env)
                assert not np.any(full & ~abst)
            checked += 1
        if checked >= 100:
            break
    assert checked >= 100


def test_last_soft_only_needs_no_refinement():
    # default timestamp (64 at 8 bits) violates the last window; the recency core keeps it
    p = contract_from_dict(
        {
            "schema": SCHEMA,
            "name": "Window",
            "storage": {"1": 0},
            "functions": [
                {
                    "name": "f",
                    "selector": 1,
                    "params": ["a"],
                    "body": [
                        {"require": "S[1] == 0"},
                        {"require": "blocknumber != 3"},
                        {"require": "timestamp < 50"},
                        {"if": "a * 3 == 21", "then": [{"bug": 1}]},
                    ],
                }
            ],
        }
    )
    pc, goal = collect_path(p, TxInput.make(1, (0,), timestamp=10), None, 8)[-1]
    g = make_goal_formula(pc, goal)
    split = anchored_decompose(g, p)
    psi0 = build_psi0(split, heuristic_fallback(split, 1))
    res = refine_loop(g, split, psi0, p, p.initial_storage(), 4, 5.0, EnumerationBackend())
    assert res.ok and res.rounds == 0
