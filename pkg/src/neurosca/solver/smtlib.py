"""SMT-LIB2 (QF_BV) script emission and a one-process-per-call solver backend."""

from __future__ import annotations

import os
import re
import shutil
import subprocess
from typing import Mapping, Sequence

from ..ir import Binary, BoolOp, Cmp, Const, Constraint, Load, Not, Unary, Var
from .base import BackendError, prepare

_BV = {
    "+": "bvadd",
    "-": "bvsub",
    "*": "bvmul",
    "&": "bvand",
    "|": "bvor",
    "^": "bvxor",
    "<<": "bvshl",
    ">>": "bvlshr",
}
_CMP = {"<": "bvult", "<=": "bvule", ">": "bvugt", ">=": "bvuge"}
_RESERVED = {"and", "or", "not", "xor", "ite", "true", "false", "distinct", "let", "forall", "exists", "as", "par", "_"}
_SIMPLE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def symbol(name: str) -> str:
    if _SIMPLE.match(name) and name not in _RESERVED and not name.startswith("bv"):
        return name
    return f"|{name}|"


def literal(value: int, width: int) -> str:
    value &= (1 << width) - 1
    if width % 4 == 0:
        return "#x" + format(value, f"0{width // 4}x")
    return "#b" + format(value, f"0{width}b")


def _term(node, width) -> str:
    if isinstance(node, Const):
        return literal(node.value, width)
    if isinstance(node, (Var, Load)):
        return symbol(node.name)
    if isinstance(node, Unary):
        return f"(bvnot {_term(node.arg, width)})"
    if isinstance(node, Binary):
        a, b = _term(node.left, width), _term(node.right, width)
        if node.op in ("/", "%"):
            zero = literal(0, width)
            fn = "bvudiv" if node.op == "/" else "bvurem"
            # division by zero yields 0, unlike SMT-LIB's total semantics
            return f"(ite (= {b} {zero}) {zero} ({fn} {a} {b}))"
        return f"({_BV[node.op]} {a} {b})"
    if isinstance(node, Cmp):
        a, b = _term(node.left, width), _term(node.right, width)
        if node.op == "==":
            return f"(= {a} {b})"
        if node.op == "!=":
            return f"(not (= {a} {b}))"
        return f"({_CMP[node.op]} {a} {b})"
    if isinstance(node, Not):
        return f"(not {_term(node.arg, width)})"
    if isinstance(node, BoolOp):
        fn = "and" if node.op == "&&" else "or"
        return f"({fn} {_term(node.left, width)} {_term(node.right, width)})"
    raise TypeError(f"not an IR node: {node!r}")


def script_for(problem) -> str:
    lines = ["(set-option :produce-models true)", "(set-logic QF_BV)"]
    for n in problem.names:
        lines.append(f"(declare-const {symbol(n)} (_ BitVec {problem.width}))")
    for p in problem.preds:
        lines.append(f"(assert {_term(p, problem.width)})")
    lines += ["(check-sat)", "(get-model)", "(exit)"]
    return "\n".join(lines) + "\n"


def emit_smtlib(constraints: Sequence[Constraint], fixed: Mapping[str, int] = ()) -> str:
    return script_for(prepare(list(constraints), fixed))


# -- output parsing ----------------------------------------------------------

_SEXP_TOKEN = re.compile(r'\s*(\(|\)|\|[^|]*\||"[^"]*"|[^\s()]+)')


def parse_sexprs(text: str) -> list:
    stack: list[list] = [[]]
    pos = 0
    while True:
        m = _SEXP_TOKEN.match(text, pos)
        if not m:
            break
        tok = m.group(1)
        pos = m.end()
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise BackendError("unbalanced ')' in solver output")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    if len(stack) != 1:
        raise BackendError("unterminated s-expression in solver output")
    return stack[0]


def bv_value(term) -> int:
    if isinstance(term, str):
        if term.startswith("#x"):
            return int(term[2:], 16)
        if term.startswith("#b"):
            return int(term[2:], 2)
        if term.isdigit():
            return int(term)
    elif isinstance(term, list) and len(term) == 3 and term[0] == "_" and term[1].startswith("bv"):
        return int(term[1][2:])
    raise BackendError(f"unsupported bitvector value {term!r}")


def parse_model(items) -> dict[str, int]:
    model: dict[str, int] = {}

    def visit(x):
        if isinstance(x, list):
            if len(x) == 5 and x[0] == "define-fun" and x[2] == []:
                model[x[1].strip("|")] = bv_value(x[4])
            else:
                for y in x:
                    visit(y)

    visit(items)
    return model


def parse_output(text: str):
    items = parse_sexprs(text)
    if not items or items[0] not in ("sat", "unsat", "unknown"):
        raise BackendError(f"unexpected solver output: {text[:200]!r}")
    status = items[0]
    if status == "sat":
        return status, parse_model(items[1:])
    return status, None


class SmtBackend:
    """Runs an SMT-LIB2 solver binary per call, feeding the script on stdin."""

    name = "smt"

    def __init__(self, binary: str | None = None, args: Sequence[str] | None = None):
        self.binary = binary or os.environ.get("NEUROSCA_SOLVER_BIN") or "z3"
        if args is None:
            args = ("-in", "-smt2") if os.path.basename(self.binary).startswith("z3") else ()
        self.args = tuple(args)

    def available(self) -> bool:
        return shutil.which(self.binary) is not None

    def check(self, problem, timeout: float):
        script = script_for(problem)
        try:
            proc = subprocess.run(
                [self.binary, *self.args],
                input=script,
                capture_output=True,
                text=True,
                timeout=timeout,
            )
        except subprocess.TimeoutExpired:
            return "timeout", None, ""
        except OSError as e:
            raise BackendError(f"cannot run solver {self.binary!r}: {e}") from e
        status, model = parse_output(proc.stdout)
        if status == "unsat":
            return status, None, ""
        if status == "unknown":
            return status, None, proc.stdout.strip()[:200]
        return status, model, ""
