from .base import BackendError, SolveOutcome, prepare, solve
from .enumeration import EnumerationBackend, sat_mask
from .smtlib import SmtBackend, emit_smtlib
from .stats import CallRecord, SolverStats, record_call


def make_backend(name: str, solver_bin: str | None = None):
    if name in ("enum", "enumeration"):
        return EnumerationBackend()
    if name in ("smt", "z3"):
        return SmtBackend(solver_bin)
    raise ValueError(f"unknown backend {name!r}")


__all__ = [
    "BackendError",
    "CallRecord",
    "EnumerationBackend",
    "SmtBackend",
    "SolveOutcome",
    "SolverStats",
    "emit_smtlib",
    "make_backend",
    "prepare",
    "record_call",
    "sat_mask",
    "solve",
]
