import os
import shutil
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from neurosca import ir  # noqa: E402
from neurosca.minivm import TxInput  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

GOLDEN = Path(__file__).parent / "golden"
HAS_Z3 = shutil.which(os.environ.get("NEUROSCA_SOLVER_BIN", "z3")) is not None

needs_z3 = pytest.mark.skipif(not HAS_Z3, reason="no SMT solver binary on PATH")


def golden(name: str, text: str) -> None:
    """Compare with tests/golden/<name>; NEUROSCA_UPDATE_GOLDEN=1 rewrites it."""
    path = GOLDEN / name
    if os.environ.get("NEUROSCA_UPDATE_GOLDEN") == "1" or not path.exists():
        GOLDEN.mkdir(exist_ok=True)
        path.write_text(text)
    assert text == path.read_text()


# -- hypothesis strategies over the IR ---------------------------------------

NAMES = ("a", "b", "c")
ARITH = ir.ARITH_OPS
CMPS = ir.CMP_OPS


def exprs(names=NAMES, width=8, storage=True):
    leaves = [st.builds(ir.Const, st.integers(0, (1 << width) - 1)), st.sampled_from([ir.Var(n) for n in names])]
    if storage:
        leaves.append(st.builds(ir.Load, st.integers(0, 3)))
    leaf = st.one_of(leaves)
    return st.recursive(
        leaf,
        lambda inner: st.one_of(
            st.builds(ir.Binary, st.sampled_from(ARITH), inner, inner),
            st.builds(ir.Unary, st.just("~"), inner),
        ),
        max_leaves=6,
    )


def preds(names=NAMES, width=8, storage=True):
    atom = st.builds(ir.Cmp, st.sampled_from(CMPS), exprs(names, width, storage), exprs(names, width, storage))
    return st.recursive(
        atom,
        lambda inner: st.one_of(
            st.builds(ir.Not, inner),
            st.builds(ir.BoolOp, st.sampled_from(ir.BOOL_OPS), inner, inner),
        ),
        max_leaves=3,
    )


def constraints_list(n_min=1, n_max=5, names=NAMES, width=8):
    return st.lists(preds(names, width, storage=False), min_size=n_min, max_size=n_max).map(
        lambda ps: [ir.Constraint(i + 1, p, width=width) for i, p in enumerate(ps)]
    )


def zero_tx(p, fname=None):
    f = p.functions[0] if fname is None else p.function(fname)
    return TxInput.make(f.selector, (0,) * len(f.params))


def guard_path(p, width=8):
    """Path condition of the first zero-argument seed (scanning timestamps) that reaches the guard."""
    from neurosca.minivm import execute
    from neurosca.symexec import collect_path

    f = p.functions[0]
    for ts in range(1 << min(width, 12)):
        seed = TxInput.make(f.selector, (0,) * len(f.params), timestamp=ts)
        trace, _ = execute(p, seed, None, width)
        if trace.status == "completed":
            return collect_path(p, seed, None, width)[-1]
    raise AssertionError("no seed reaches the guard")


# -- acceptance summary ------------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def acceptance_line(n: int, ok: bool | None, detail: str) -> str:
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    line = f"criterion {n}: {status}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
