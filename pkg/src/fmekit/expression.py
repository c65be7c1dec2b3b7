"""Tiny arithmetic expression language for analytic test models.

Grammar (usual precedence, ``^`` is right-associative and binds tighter
than unary minus):

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

Names that are not function names refer to numeric features. Supported
functions: sin, cos, exp, log, abs.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from fmekit.errors import ValidationError

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "abs": np.abs,
}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[()+\-*/^]))"
)


class Node:
    pass


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    name: str


@dataclass(frozen=True)
class Call(Node):
    func: str
    arg: Node


@dataclass(frozen=True)
class Unary(Node):
    arg: Node


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            if text[pos:].strip():
                raise ValidationError(
                    f"expression: unexpected character {text[pos:].strip()[0]!r}"
                )
            break
        pos = m.end()
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def expect_op(self, op):
        kind, text = self.take()
        if kind != "op" or text != op:
            raise ValidationError(f"expression: expected {op!r}, got {text!r}")

    def parse(self) -> Node:
        node = self.expr()
        if self.i != len(self.tokens):
            raise ValidationError(
                f"expression: trailing input at {self.tokens[self.i][1]!r}"
            )
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.take()
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            _, op = self.take()
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek() == ("op", "-"):
            self.take()
            return Unary(self.unary())
        return self.power()

    def power(self) -> Node:
        node = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            node = BinOp("^", node, self.unary())
        return node

    def atom(self) -> Node:
        kind, text = self.take()
        if kind == "num":
            value = float(text)
            if not math.isfinite(value):
                raise ValidationError(f"expression: literal out of range: {text!r}")
            return Num(value)
        if kind == "name":
            if self.peek() == ("op", "("):
                if text not in FUNCTIONS:
                    raise ValidationError(f"expression: unknown function {text!r}")
                self.take()
                arg = self.expr()
                self.expect_op(")")
                return Call(text, arg)
            return Var(text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise ValidationError(f"expression: unexpected token {text!r}")


def parse_expression(text: str) -> Node:
    if not isinstance(text, str) or not text.strip():
        raise ValidationError("expression must be a non-empty string")
    return _Parser(_tokenize(text)).parse()


def variables(node: Node) -> list[str]:
    """Feature names referenced by the expression, in first-use order."""
    seen: dict[str, None] = {}

    def walk(n: Node):
        if isinstance(n, Var):
            seen.setdefault(n.name)
        elif isinstance(n, Call):
            walk(n.arg)
        elif isinstance(n, Unary):
            walk(n.arg)
        elif isinstance(n, BinOp):
            walk(n.left)
            walk(n.right)

    walk(node)
    return list(seen)


def evaluate(node: Node, cols) -> np.ndarray:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return cols[node.name]
    if isinstance(node, Call):
        return FUNCTIONS[node.func](evaluate(node.arg, cols))
    if isinstance(node, Unary):
        return -evaluate(node.arg, cols)
    a = evaluate(node.left, cols)
    b = evaluate(node.right, cols)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return a / b
    return np.power(a, b)


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "unary": 3, "^": 4}
_ATOM_PREC = 5


def to_string(node: Node) -> str:
    """Canonical rendering; parsing it back yields an identical tree."""

    def wrap(child: Node, parent_prec: int, tie_wrap: bool) -> str:
        text, prec = render(child)
        if prec < parent_prec or (prec == parent_prec and tie_wrap):
            return f"({text})"
        return text

    def render(n: Node) -> tuple[str, int]:
        if isinstance(n, Num):
            text = repr(n.value) if n.value != int(n.value) else str(int(n.value))
            return text, _ATOM_PREC
        if isinstance(n, Var):
            return n.name, _ATOM_PREC
        if isinstance(n, Call):
            return f"{n.func}({render(n.arg)[0]})", _ATOM_PREC
        if isinstance(n, Unary):
            return "-" + wrap(n.arg, _PREC["unary"], False), _PREC["unary"]
        prec = _PREC[n.op]
        # - and / are left-associative, ^ is right-associative: the
        # other side of each needs parens on an equal-precedence tie
        left = wrap(n.left, prec, n.op == "^")
        right = wrap(n.right, prec, n.op != "^")
        text = f"{left} {n.op} {right}" if n.op in "+-" else f"{left}{n.op}{right}"
        return text, prec

    return render(node)[0]
