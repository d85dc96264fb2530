"""Command line entry point: ``neurosca solve|fuzz|bench|report``.

Exit codes: 0 success, 2 configuration error, 3 solver backend unavailable.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .dispatch import Dispatcher, SolverConfig, MODES
from .harness import CampaignConfig, CampaignReport, format_machine, format_table, make_selector, run_campaign, write_report
from .ir import make_goal_formula
from .minivm import TxInput, load_contract, save_contract
from .solver import BackendError, SmtBackend, make_backend
from .symexec import collect_path
from .synthetic import FAMILIES, SyntheticSpec, generate_synthetic

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND = 0, 2, 3


class ConfigError(Exception):
    pass


def _goal(text: str) -> tuple[int, bool]:
    site, _, d = text.partition(":")
    if d.upper() not in ("T", "F", "TRUE", "FALSE", "1", "0"):
        raise ConfigError(f"goal must look like <site>:T or <site>:F, got {text!r}")
    try:
        return int(site), d.upper() in ("T", "TRUE", "1")
    except ValueError:
        raise ConfigError(f"bad goal site in {text!r}") from None


def _solver_args(ap):
    ap.add_argument("--mode", choices=MODES, default="selective")
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--backend", choices=("enum", "smt"), default="smt")
    ap.add_argument("--t-short", type=float, default=1.5)
    ap.add_argument("--t-neur", type=float, default=5.0)
    ap.add_argument("--baseline-timeout", type=float, default=60.0)
    ap.add_argument("--rounds", type=int, default=4)
    ap.add_argument("--k-max", type=int, default=8)
    ap.add_argument("--selector", default="none", help="none | canned:<dir> | http | http:<url>")


def _check_backend(name: str) -> None:
    if name == "smt" and not SmtBackend().available():
        raise BackendError("SMT solver binary not found (set NEUROSCA_SOLVER_BIN)")


def cmd_solve(a) -> int:
    p = load_contract(a.contract)
    site, direction = _goal(a.goal)
    _check_backend(a.backend)
    if a.tx:
        seed = TxInput.from_json(json.loads(a.tx))
    else:
        try:
            f = p.site_function(site)
        except (KeyError, LookupError, ValueError):
            raise ConfigError(f"no branch site {site} in {p.name}") from None
        seed = TxInput.make(f.selector, (0,) * len(f.params))
    state = p.initial_storage()
    for pc, goal in collect_path(p, seed, state, a.width):
        if goal.site == site:
            break
    else:
        raise ConfigError(f"site {site} is not on the path of the seed transaction; pass --tx")
    if goal.direction != direction:
        print(json.dumps({"goal": a.goal, "status": "already-taken", "input": seed.to_json()}))
        return EXIT_OK
    cfg = SolverConfig(a.mode, a.t_short, a.t_neur, a.baseline_timeout, a.rounds, a.k_max)
    d = Dispatcher(cfg, make_backend(a.backend), make_selector(a.selector))
    res = d.solve(make_goal_formula(pc, goal), p, state)
    doc = {
        "goal": a.goal,
        "mode_used": res.mode_used,
        "status": "sat-with-input" if res.accepted else (res.refinement.status if res.refinement else res.outcome.status),
        "input": res.input.to_json() if res.input else None,
        "rounds": res.refinement.rounds if res.refinement else 0,
    }
    print(json.dumps(doc))
    return EXIT_OK


def cmd_fuzz(a) -> int:
    _check_backend(a.backend)
    cfg = CampaignConfig(
        contracts=list(a.contracts),
        mode=a.mode,
        budget=a.budget,
        seed=a.seed,
        width=a.width,
        t_short=a.t_short,
        t_neur=a.t_neur,
        baseline_timeout=a.baseline_timeout,
        rounds=a.rounds,
        k_max=a.k_max,
        selector=a.selector,
        output=a.out,
        backend=a.backend,
        max_iterations=a.iterations,
        workers=a.workers,
        cache_dir=a.cache_dir,
    )
    report = run_campaign(cfg)
    sys.stdout.write(format_table(report))
    return EXIT_OK


def cmd_bench(a) -> int:
    spec = SyntheticSpec(a.family, a.noise, a.depth, a.seed, a.width)
    p = generate_synthetic(spec)
    save_contract(p, a.out)
    print(f"wrote {p.name} ({len(p.sites())} branch sites) to {a.out}")
    return EXIT_OK


def cmd_report(a) -> int:
    try:
        doc = json.loads(Path(a.raw).read_text())
        if not isinstance(doc, dict) or "records" not in doc:
            raise TypeError("no records")
        report = CampaignReport.from_dict(doc)
    except (json.JSONDecodeError, TypeError, AttributeError) as e:
        raise ConfigError(f"{a.raw} is not a machine-format report: {e}") from None
    if a.out:
        write_report(report, a.out, a.format)
    else:
        sys.stdout.write(format_table(report) if a.format == "table" else format_machine(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neurosca", description="Selective constraint abstraction for hybrid fuzzing")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("solve", help="flip one branch direction")
    s.add_argument("contract")
    s.add_argument("--goal", required=True, help="<site>:T or <site>:F")
    s.add_argument("--tx", help="seed transaction as JSON (default: zero arguments)")
    _solver_args(s)
    s.set_defaults(func=cmd_solve)

    f = sub.add_parser("fuzz", help="run a campaign")
    f.add_argument("contracts", nargs="+")
    f.add_argument("--budget", type=float, default=60.0, help="seconds per contract")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--out", help="report path; writes <out>.json and <out>.txt")
    f.add_argument("--iterations", type=int, help="iteration cap (reproducible runs)")
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--cache-dir")
    _solver_args(f)
    f.set_defaults(func=cmd_fuzz, width=8, backend="enum")

    b = sub.add_parser("bench", help="generate a synthetic contract")
    b.add_argument("--family", choices=FAMILIES, required=True)
    b.add_argument("--noise", type=int, default=0)
    b.add_argument("--depth", type=int, default=1)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--width", type=int, default=8)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="render a machine-format report")
    r.add_argument("raw")
    r.add_argument("--format", choices=("table", "machine"), default="table")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(a.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except BackendError as e:
        print(f"neurosca: backend unavailable: {e}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, ValueError, LookupError, OSError) as e:
        print(f"neurosca: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
