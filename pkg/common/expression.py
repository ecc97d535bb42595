"""Recursive-descent parser for the one-variable expressions of a config.

Grammar (whitespace insignificant, no unary plus):

    expr    := term (('+' | '-') term)*
    term    := factor (('*' | '/') factor)*
    factor  := unary
    unary   := '-' unary | power
    power   := primary ('^' factor)?
    primary := NUMBER | 'u' | FUNC '(' expr ')' | '(' expr ')'

so '^' binds tighter than unary minus ("-u^2" is -(u^2)) and is
right-associative ("2^3^2" is 2^9).
"""
import logging
import re
from dataclasses import dataclass
from typing import List, Union

import numpy as np

from common.constants import EXPRESSION_FUNCTIONS, EXPRESSION_VARIABLE
from common.errors import (
    ExpressionSyntaxError, NonFiniteValue, UnknownFunction, UnknownVariable,
)

logger = logging.getLogger(__name__)

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
assert set(_FUNCTIONS) == set(EXPRESSION_FUNCTIONS)

_TOKEN = re.compile(r"""
    (?P<space>\s+)
  | (?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
""", re.VERBOSE)


@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Variable:
    name: str


@dataclass(frozen=True)
class Negate:
    operand: "Node"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Number, Variable, Negate, Binary, Call]


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


def _tokenize(src: str) -> List[_Token]:
    tokens = []
    pos = 0
    while pos < len(src):
        match = _TOKEN.match(src, pos)
        if match is None:
            raise ExpressionSyntaxError(f"unexpected character {src[pos]!r}", _byte_offset(src, pos))
        kind = match.lastgroup
        if kind != "space":
            tokens.append(_Token(kind, match.group(), _byte_offset(src, pos)))
        pos = match.end()
    tokens.append(_Token("end", "", _byte_offset(src, len(src))))
    return tokens


def _byte_offset(src: str, index: int) -> int:
    return len(src[:index].encode("utf-8"))


class _Parser:
    def __init__(self, src: str):
        self.tokens = _tokenize(src)
        self.index = 0

    def peek(self) -> _Token:
        return self.tokens[self.index]

    def advance(self) -> _Token:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def accept(self, text: str) -> bool:
        if self.peek().kind == "op" and self.peek().text == text:
            self.index += 1
            return True
        return False

    def expect(self, text: str):
        token = self.peek()
        if not self.accept(text):
            found = token.text or "end of input"
            raise ExpressionSyntaxError(f"expected {text!r}, found {found!r}", token.offset)

    def parse(self) -> Node:
        node = self.expr()
        token = self.peek()
        if token.kind != "end":
            raise ExpressionSyntaxError(f"unexpected {token.text!r}", token.offset)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.advance().text
            node = Binary(op, node, self.factor())
        return node

    def factor(self) -> Node:
        return self.unary()

    def unary(self) -> Node:
        if self.accept("-"):
            return Negate(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.accept("^"):
            return Binary("^", base, self.factor())
        return base

    def primary(self) -> Node:
        token = self.peek()
        if token.kind == "number":
            self.advance()
            return Number(float(token.text))
        if token.kind == "name":
            self.advance()
            if self.peek().kind == "op" and self.peek().text == "(":
                if token.text not in _FUNCTIONS:
                    raise UnknownFunction(f"unknown function {token.text!r} at byte {token.offset}")
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(token.text, arg)
            if token.text != EXPRESSION_VARIABLE:
                raise UnknownVariable(f"unknown variable {token.text!r} at byte {token.offset}")
            return Variable(token.text)
        if self.accept("("):
            node = self.expr()
            self.expect(")")
            return node
        found = token.text or "end of input"
        raise ExpressionSyntaxError(f"unexpected {found!r}", token.offset)


def parse_expression(src: str) -> Node:
    return _Parser(src).parse()


def _evaluate(node: Node, u):
    if isinstance(node, Number):
        return node.value
    if isinstance(node, Variable):
        return u
    if isinstance(node, Negate):
        return -_evaluate(node.operand, u)
    if isinstance(node, Call):
        return _FUNCTIONS[node.func](_evaluate(node.arg, u))
    left = _evaluate(node.left, u)
    right = _evaluate(node.right, u)
    if node.op == "+":
        return left + right
    if node.op == "-":
        return left - right
    if node.op == "*":
        return left * right
    if node.op == "/":
        return np.divide(left, right)
    return np.power(left, right)


def evaluate_array(ast: Node, u) -> np.ndarray:
    """Elementwise evaluation; non-finite results are returned as they are."""
    u = np.asarray(u, dtype=float)
    with np.errstate(all="ignore"):
        return np.broadcast_to(np.asarray(_evaluate(ast, u), dtype=float), u.shape)


def eval_expression(ast: Node, u: float) -> float:
    value = float(evaluate_array(ast, float(u)))
    if not np.isfinite(value):
        raise NonFiniteValue(f"expression is not finite at u={u}")
    return value


def pretty_print(node: Node) -> str:
    """Fully parenthesised text that parses back to an equivalent tree."""
    if isinstance(node, Number):
        return repr(node.value)
    if isinstance(node, Variable):
        return node.name
    if isinstance(node, Negate):
        return f"(-{pretty_print(node.operand)})"
    if isinstance(node, Call):
        return f"{node.func}({pretty_print(node.arg)})"
    return f"({pretty_print(node.left)} {node.op} {pretty_print(node.right)})"


class Expression:
    """A parsed expression usable as an elementwise function of u."""

    def __init__(self, source: str):
        self.source = source
        self.ast = parse_expression(source)

    def __call__(self, u):
        return evaluate_array(self.ast, u)

    def __repr__(self):
        return f"Expression({self.source!r})"
