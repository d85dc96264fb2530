import json
import random

import pytest

from conftest import golden
from neurosca.coreselect import CannedTransport
from neurosca.harness import (
    COLUMNS,
    COVERAGE_NOTE,
    TIMING_FIELDS,
    CampaignConfig,
    CampaignReport,
    ContractRecord,
    Mutator,
    format_machine,
    format_table,
    make_selector,
    replay_bug,
    run_campaign,
    write_report,
)
from neurosca.minivm import TxInput, dumps_contract, execute_sequence
from neurosca.synthetic import SyntheticSpec, generate_synthetic, random_program


def token(seed=1, depth=3):
    return generate_synthetic(SyntheticSpec("easy-token", depth=depth, seed=seed))


def campaign(contracts, **kw):
    base = {"budget": 60.0, "seed": 0, "max_iterations": 40, "t_short": 5.0, "baseline_timeout": 5.0}
    return run_campaign(CampaignConfig(list(contracts), **{**base, **kw}))


@pytest.fixture(scope="module")
def token_report():
    return campaign([token(1), token(2)], selector=lambda: CannedTransport())


def test_easy_token_full_coverage_without_selector(token_report):
    for r in token_report.records:
        assert r.coverage == 100.0 and r.covered == r.total
        assert r.selector_calls == 0 and r.fallbacks == 0
        assert r.bugs == [1, 2]
        assert r.backend_errors == 0


def test_bugs_replay(token_report):
    programs = {p.name: p for p in (token(1), token(2))}
    for r in token_report.records:
        for bug, seq in r.reproducers.items():
            assert replay_bug(programs[r.contract], seq, int(bug), r.width)
        assert not replay_bug(programs[r.contract], [], 1, r.width)


def test_coverage_timeline_monotone(token_report):
    for r in token_report.records:
        counts = [c for _, c in r.timeline]
        assert counts == sorted(counts)
        assert [i for i, _ in r.timeline] == list(range(len(r.timeline)))
        assert counts[-1] == r.covered


def test_reproducible_with_iteration_cap():
    progs = [random_program(s) for s in (3, 11, 40)]
    a = campaign(progs, max_iterations=15)
    b = campaign(progs, max_iterations=15)
    assert a.deterministic() == b.deterministic()
    assert all(k not in d for d in a.deterministic() for k in TIMING_FIELDS)


def test_modes_agree_on_easy_bugs():
    p = token(3)
    found = {m: campaign([p], mode=m).records[0].bugs for m in ("baseline", "neurosca-only", "selective")}
    assert found["baseline"] == found["selective"] == found["neurosca-only"] == [1, 2]


def test_random_programs_sound():
    for s in range(20):
        p = random_program(s)
        r = campaign([p], max_iterations=10).records[0]
        assert 0 <= r.covered <= r.total == 2 * len(p.sites())
        for bug, seq in r.reproducers.items():
            assert replay_bug(p, seq, int(bug), 8)


def test_workers_match_sequential():
    progs = [token(1), token(4)]
    seq = campaign(progs).deterministic()
    par = campaign(progs, workers=2).deterministic()
    assert par == seq


def test_contract_files_and_unique_names(tmp_path):
    path = tmp_path / "t.json"
    path.write_text(dumps_contract(token(1)))
    r = campaign([str(path)], max_iterations=5)
    assert r.records[0].contract == token(1).name
    with pytest.raises(ValueError):
        campaign([token(1), token(1)])


def test_cache_dir_written(tmp_path):
    campaign([token(1)], cache_dir=str(tmp_path), max_iterations=5)
    doc = json.loads((tmp_path / f"{token(1).name}.cache.json").read_text())
    assert doc["entries"] and all(e["label"] == "easy" for e in doc["entries"].values())


@pytest.mark.parametrize(
    "kw", [{"budget": 0}, {"width": 0}, {"width": 65}, {"max_seq": 0}, {"workers": 0}, {"mode": "turbo"}, {"k_max": 0}, {"t_short": -1}]
)
def test_config_errors(kw):
    with pytest.raises(ValueError):
        CampaignConfig([], **kw)


def test_make_selector():
    assert make_selector(None) is None and make_selector("heuristic") is None
    assert isinstance(make_selector("canned:/tmp"), CannedTransport)
    assert make_selector("http:http://h/v1").base_url == "http://h/v1"
    with pytest.raises(ValueError):
        make_selector("oracle")


def test_mutator_respects_bounds():
    p = token(1)
    m = Mutator(p, random.Random(0), 8, 4)
    seq = (m.zero_tx(p.functions[0]),)
    selectors = {f.selector for f in p.functions}
    for _ in range(500):
        seq = m.mutate(seq)
        assert 1 <= len(seq) <= 4
        for tx in seq:
            assert tx.selector in selectors
            assert all(0 <= v < 256 for v in tx.args)
        execute_sequence(p, seq, None, 8)


def _fixed_record(name, mode, **kw):
    base = dict(
        contract=name, mode=mode, seed=0, width=8, covered=5, total=8, coverage=62.5, bugs=[1], calls=12, avg=0.25,
        p99=1.5, solver_time=3.0, selector_calls=2, fallbacks=1, rounds={"0": 1, "2": 1}, iterations=9, corpus=4,
        attempts=7, accepted=3, backend_errors=0, reproducers={"1": [TxInput.make(1, (2,)).to_json()]},
        timeline=[[0, 2], [1, 5]], elapsed=4.0,
    )
    return ContractRecord(**{**base, **kw})


def test_report_golden(tmp_path):
    report = CampaignReport([_fixed_record("DeepTimelock", "selective"), _fixed_record("EasyToken_d3_s1", "baseline", bugs=[1, 2], coverage=100.0)])
    paths = write_report(report, tmp_path / "run")
    assert [p.name for p in paths] == ["run.json", "run.txt"]
    golden("report_table.txt", paths[1].read_text())
    golden("report_machine.json", paths[0].read_text())
    back = CampaignReport.from_dict(json.loads(paths[0].read_text()))
    assert back == report
    assert format_table(back) == paths[1].read_text()


def test_golden_over_live_run_with_timing_zeroed(token_report):
    zeroed = CampaignReport([ContractRecord(**{**r.to_dict(), **{k: 0.0 for k in TIMING_FIELDS}}) for r in token_report.records])
    golden("report_easy_token.txt", format_table(zeroed))


def test_empty_report_is_header_only():
    text = format_table(CampaignReport())
    assert text.splitlines() == [f"# {COVERAGE_NOTE}", "  ".join(h for h, _, _ in COLUMNS)]
    assert json.loads(format_machine(CampaignReport()))["records"] == []


def test_machine_and_table_agree(token_report):
    doc = json.loads(format_machine(token_report))
    rows = format_table(token_report).splitlines()[2:]
    assert len(rows) == len(doc["records"])
    for row, rec in zip(rows, doc["records"]):
        cells = row.split()
        assert cells[0] == rec["contract"] and cells[1] == rec["mode"]
        assert float(cells[2]) == pytest.approx(rec["coverage"], abs=0.005)
        assert int(cells[3]) == len(rec["bugs"]) and int(cells[4]) == rec["calls"]
        assert int(cells[7]) == rec["selector_calls"] and int(cells[8]) == rec["fallbacks"]


def test_write_report_formats(tmp_path):
    r = CampaignReport([_fixed_record("X", "selective")])
    assert [p.name for p in write_report(r, tmp_path / "m.json", "machine")] == ["m.json"]
    assert [p.name for p in write_report(r, tmp_path / "t.txt", "table")] == ["t.txt"]
    with pytest.raises(ValueError):
        write_report(r, tmp_path / "x", "yaml")
    with pytest.raises(OSError):
        write_report(r, tmp_path / "missing" / "dir" / "x")
