"""Infix expression grammar shared by contract files and constraint rendering."""

from __future__ import annotations

import re

from .ir import (
    EXPR_TYPES,
    PRED_TYPES,
    Binary,
    BoolOp,
    Cmp,
    Const,
    Constraint,
    Load,
    Not,
    Unary,
    Var,
)


class ParseError(ValueError):
    pass


_TOKEN = re.compile(
    r"\s*(?:(0x[0-9a-fA-F]+|\d+)|([A-Za-z_][A-Za-z0-9_]*)|(<<|>>|==|!=|<=|>=|&&|\|\||[-+*/%&|^<>!~()\[\]]))"
)

# binding power of binary operators, loosest first
_LEVELS = (
    ("||",),
    ("&&",),
    ("==", "!="),
    ("<", "<=", ">", ">="),
    ("|",),
    ("^",),
    ("&",),
    ("<<", ">>"),
    ("+", "-"),
    ("*", "/", "%"),
)
_PREC = {op: i for i, ops in enumerate(_LEVELS) for op in ops}


def tokenize(text: str) -> list[str]:
    pos, out = 0, []
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        out.append(m.group(m.lastindex))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, expected=None):
        tok = self.peek()
        if tok is None or (expected is not None and tok != expected):
            raise ParseError(f"expected {expected or 'token'}, got {tok!r}")
        self.i += 1
        return tok

    def parse(self):
        node = self.binary(0)
        if self.peek() is not None:
            raise ParseError(f"trailing input at {self.peek()!r}")
        return node

    def binary(self, level):
        if level == len(_LEVELS):
            return self.unary()
        left = self.binary(level + 1)
        while self.peek() in _LEVELS[level]:
            op = self.take()
            right = self.binary(level + 1)
            left = _combine(op, left, right)
        return left

    def unary(self):
        tok = self.peek()
        if tok == "!":
            self.take()
            arg = self.unary()
            if not isinstance(arg, PRED_TYPES):
                raise ParseError("'!' applies to predicates; use '~' for bitwise not")
            return Not(arg)
        if tok == "~":
            self.take()
            arg = self.unary()
            _need_expr(arg, "~")
            return Unary("~", arg)
        return self.atom()

    def atom(self):
        tok = self.take()
        if tok == "(":
            node = self.binary(0)
            self.take(")")
            return node
        if tok[0].isdigit():
            return Const(int(tok, 0))
        if tok == "S" and self.peek() == "[":
            self.take("[")
            slot = self.take()
            if not slot[0].isdigit():
                raise ParseError("storage index must be a literal")
            self.take("]")
            return Load(int(slot, 0))
        if tok[0].isalpha() or tok[0] == "_":
            return Var(tok)
        raise ParseError(f"unexpected token {tok!r}")


def _need_expr(node, op):
    if not isinstance(node, EXPR_TYPES):
        raise ParseError(f"operator {op!r} needs a bitvector operand")


def _combine(op, left, right):
    if op in ("&&", "||"):
        for side in (left, right):
            if not isinstance(side, PRED_TYPES):
                raise ParseError(f"operator {op!r} needs predicate operands")
        return BoolOp(op, left, right)
    _need_expr(left, op)
    _need_expr(right, op)
    if op in ("==", "!=", "<", "<=", ">", ">="):
        return Cmp(op, left, right)
    return Binary(op, left, right)


def parse(text: str):
    """Parse an expression or predicate."""
    return _Parser(text).parse()


def parse_pred(text: str):
    node = parse(text)
    if not isinstance(node, PRED_TYPES):
        raise ParseError(f"predicate expected: {text!r}")
    return node


def parse_expr(text: str):
    node = parse(text)
    if not isinstance(node, EXPR_TYPES):
        raise ParseError(f"expression expected: {text!r}")
    return node


def render(node) -> str:
    if isinstance(node, Const):
        return str(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Load):
        return f"S[{node.slot}]"
    if isinstance(node, Unary):
        return f"(~{render(node.arg)})"
    if isinstance(node, Not):
        return f"(!{render(node.arg)})"
    if isinstance(node, (Binary, Cmp, BoolOp)):
        return f"({render(node.left)} {node.op} {render(node.right)})"
    raise TypeError(f"not an IR node: {node!r}")


def canonical_text(c) -> str:
    """Fully parenthesized infix text; accepts a Constraint or any IR node."""
    return render(c.pred if isinstance(c, Constraint) else c)
