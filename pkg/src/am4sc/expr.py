"""Tiny arithmetic expression language.

Reference-model oracles and mock service bodies share this language. It is
deliberately minimal so expected values stay hand-computable:

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := NUMBER | IDENT | '(' expr ')'

NUMBER is an unsigned integer or decimal literal ("7", "2.5"); there is no
unary minus (write "0 - x"). IDENT names a parameter bound at evaluation
time. '+', '-' and '*' keep ints int; '/' is true division and always yields
a real. Arithmetic requires numeric operands; text and bool values can only
pass through as bare identifiers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

Value = Union[int, float, bool, str]


class ExpressionError(Exception):
    """Base for parse and evaluation failures."""


class ExpressionSyntaxError(ExpressionError):
    pass


class EvaluationError(ExpressionError):
    pass


@dataclass(frozen=True)
class Num:
    value: int | float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


Node = Union[Num, Var, BinOp]

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+(?:\.\d+)?)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/()]))"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens: list[tuple[str, str]] = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            if text[pos:].strip() == "":
                break
            raise ExpressionSyntaxError(f"unexpected character {text[pos:].lstrip()[0]!r} in {text!r}")
        if match.lastgroup == "number":
            tokens.append(("number", match.group("number")))
        elif match.lastgroup == "ident":
            tokens.append(("ident", match.group("ident")))
        else:
            tokens.append(("op", match.group("op")))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.index = 0

    def peek(self) -> tuple[str, str] | None:
        if self.index < len(self.tokens):
            return self.tokens[self.index]
        return None

    def advance(self) -> tuple[str, str]:
        token = self.peek()
        if token is None:
            raise ExpressionSyntaxError(f"unexpected end of expression in {self.text!r}")
        self.index += 1
        return token

    def parse(self) -> Node:
        node = self.expr()
        if self.peek() is not None:
            kind, value = self.peek()
            raise ExpressionSyntaxError(f"trailing {value!r} in {self.text!r}")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek() is not None and self.peek()[1] in ("+", "-"):
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek() is not None and self.peek()[1] in ("*", "/"):
            op = self.advance()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Node:
        kind, value = self.advance()
        if kind == "number":
            return Num(float(value) if "." in value else int(value))
        if kind == "ident":
            return Var(value)
        if value == "(":
            node = self.expr()
            token = self.peek()
            if token is None or token[1] != ")":
                raise ExpressionSyntaxError(f"missing ')' in {self.text!r}")
            self.advance()
            return node
        raise ExpressionSyntaxError(f"unexpected {value!r} in {self.text!r}")


def _as_number(value: Value, *, context: str) -> int | float:
    # bool is an int subclass; reject it explicitly to keep the language crisp
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise EvaluationError(f"non-numeric operand {value!r} in {context}")
    return value


def _eval(node: Node, binding: dict, text: str) -> Value:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        if node.name not in binding:
            raise EvaluationError(f"unknown name {node.name!r} in {text!r}")
        return binding[node.name]
    left = _as_number(_eval(node.left, binding, text), context=text)
    right = _as_number(_eval(node.right, binding, text), context=text)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if right == 0:
        raise EvaluationError(f"division by zero in {text!r}")
    return left / right


def _names(node: Node) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, BinOp):
        return _names(node.left) | _names(node.right)
    return set()


@dataclass(frozen=True)
class Expression:
    """A parsed expression that remembers its source text."""

    text: str
    root: Node

    @classmethod
    def parse(cls, text: str) -> "Expression":
        if not isinstance(text, str):
            raise ExpressionSyntaxError(f"expression must be a string, got {text!r}")
        parser = _Parser(text)
        if not parser.tokens:
            raise ExpressionSyntaxError("empty expression")
        return cls(text=text, root=parser.parse())

    def evaluate(self, binding: dict) -> Value:
        return _eval(self.root, binding, self.text)

    def names(self) -> frozenset[str]:
        return frozenset(_names(self.root))
