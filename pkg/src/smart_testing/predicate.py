"""Slice predicate language.

Grammar (``and`` binds tighter than ``or``)::

    expr    := conj ("or" conj)*
    conj    := term ("and" term)*
    term    := "(" expr ")" | NAME OP literal | NAME "in" "[" literal ("," literal)* "]"
    OP      := "==" | "!=" | "<" | "<=" | ">" | ">="
    literal := NUMBER | STRING | "true" | "false"

Strings are double-quoted (single quotes are accepted on input). Chains of the same
operator are left-associative.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterator, Mapping, Union

import numpy as np

from .dataset import ColumnKind, Dataset, format_value, parse_bool_token


class PredicateError(ValueError):
    pass


class PredicateSyntaxError(PredicateError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnknownColumn(PredicateError):
    pass


class TypeMismatch(PredicateError):
    pass


Literal = Union[int, float, str, bool]

COMPARISON_OPS = ("==", "!=", "<", "<=", ">", ">=")
ORDERING_OPS = ("<", "<=", ">", ">=")


@dataclass(frozen=True)
class Comparison:
    column: str
    op: str
    literal: Literal


@dataclass(frozen=True)
class InSet:
    column: str
    values: tuple


@dataclass(frozen=True)
class And:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Or:
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Parenthesized:
    child: "Node"


Node = Union[Comparison, InSet, And, Or, Parenthesized]


@dataclass(frozen=True)
class Slice:
    predicate: Node
    row_indices: np.ndarray

    def __len__(self) -> int:
        return len(self.row_indices)

    def mask(self, n_rows: int) -> np.ndarray:
        m = np.zeros(n_rows, dtype=bool)
        m[self.row_indices] = True
        return m


# -- tokenizer ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>-?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<dstring>"(?:[^"\\]|\\.)*")
  | (?P<sstring>'(?:[^'\\]|\\.)*')
  | (?P<op>==|!=|<=|>=|<|>)
  | (?P<punct>[()\[\],])
  | (?P<name>[A-Za-z_][A-Za-z0-9_.]*)
    """,
    re.VERBOSE,
)

_KEYWORDS = {"and", "or", "in", "true", "false", "True", "False"}


@dataclass
class _Token:
    kind: str
    text: str
    pos: int


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise PredicateSyntaxError(f"unexpected character {text[pos]!r}", _byte_offset(text, pos))
        kind = m.lastgroup
        if kind != "ws":
            value = m.group()
            if kind == "name" and value in _KEYWORDS:
                kind = "kw"
            tokens.append(_Token(kind, value, pos))
        pos = m.end()
    tokens.append(_Token("eof", "", len(text)))
    return tokens


def _unquote(token: _Token) -> str:
    if token.kind == "dstring":
        return json.loads(token.text)
    inner = token.text[1:-1]
    return re.sub(r"\\(.)", r"\1", inner)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: _Token | None = None):
        tok = tok or self.peek()
        shown = tok.text or "end of input"
        raise PredicateSyntaxError(f"{message}, found {shown!r}", _byte_offset(self.text, tok.pos))

    def expect(self, kind: str, text: str | None = None) -> _Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            self.error(f"expected {text or kind}")
        return self.advance()

    def parse(self) -> Node:
        node = self.expr()
        if self.peek().kind != "eof":
            self.error("unexpected trailing input")
        return node

    def expr(self) -> Node:
        node = self.conj()
        while self.peek().kind == "kw" and self.peek().text == "or":
            self.advance()
            node = Or(node, self.conj())
        return node

    def conj(self) -> Node:
        node = self.term()
        while self.peek().kind == "kw" and self.peek().text == "and":
            self.advance()
            node = And(node, self.term())
        return node

    def term(self) -> Node:
        tok = self.peek()
        if tok.kind == "punct" and tok.text == "(":
            self.advance()
            inner = self.expr()
            self.expect("punct", ")")
            # grouping is carried by the tree shape; no wrapper node is kept
            return inner
        if tok.kind != "name":
            self.error("expected a column name or '('")
        column = self.advance().text
        tok = self.peek()
        if tok.kind == "op":
            op = self.advance().text
            return Comparison(column, op, self.literal())
        if tok.kind == "kw" and tok.text == "in":
            self.advance()
            self.expect("punct", "[")
            values = [self.literal()]
            while self.peek().kind == "punct" and self.peek().text == ",":
                self.advance()
                values.append(self.literal())
            self.expect("punct", "]")
            return InSet(column, tuple(values))
        self.error("expected a comparison operator or 'in'")

    def literal(self) -> Literal:
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            if re.fullmatch(r"-?\d+", tok.text):
                return int(tok.text)
            return float(tok.text)
        if tok.kind in ("dstring", "sstring"):
            self.advance()
            return _unquote(tok)
        if tok.kind == "kw" and tok.text.lower() in ("true", "false"):
            self.advance()
            return tok.text.lower() == "true"
        self.error("expected a literal")


# -- public API --------------------------------------------------------------

SchemaLike = Union[Dataset, Mapping[str, ColumnKind], None]


def parse_predicate(text: str, schema: SchemaLike = None) -> Node:
    """Parse ``text`` and, when ``schema`` is given, validate column names and types."""
    if not text or not text.strip():
        raise PredicateSyntaxError("empty predicate", 0)
    ast = _Parser(text).parse()
    if schema is not None:
        validate(ast, schema)
    return ast


def _schema_map(schema: SchemaLike) -> Mapping[str, ColumnKind]:
    if isinstance(schema, Dataset):
        return schema.schema
    return schema


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_literal(column: str, kind: ColumnKind, op: str, value) -> None:
    if kind is ColumnKind.NUMERIC:
        if not _is_number(value):
            raise TypeMismatch(f"column {column!r} is numeric; {value!r} is not a number")
    elif kind is ColumnKind.CATEGORICAL:
        if op in ORDERING_OPS:
            raise TypeMismatch(f"operator {op!r} is not defined on categorical column {column!r}")
        if isinstance(value, bool):
            raise TypeMismatch(f"column {column!r} is categorical; {value!r} is boolean")
    else:
        if op in ORDERING_OPS:
            raise TypeMismatch(f"operator {op!r} is not defined on boolean column {column!r}")
        if parse_bool_token(value) is None:
            raise TypeMismatch(f"column {column!r} is boolean; {value!r} is not a boolean value")


def validate(ast: Node, schema: SchemaLike) -> None:
    kinds = _schema_map(schema)
    for node in walk(ast):
        if isinstance(node, (Comparison, InSet)):
            if node.column not in kinds:
                raise UnknownColumn(f"unknown column {node.column!r}")
            kind = kinds[node.column]
            if isinstance(node, Comparison):
                _check_literal(node.column, kind, node.op, node.literal)
            else:
                if not node.values:
                    raise TypeMismatch(f"empty value list for column {node.column!r}")
                for v in node.values:
                    _check_literal(node.column, kind, "==", v)


def walk(ast: Node) -> Iterator[Node]:
    stack = [ast]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, (And, Or)):
            stack.append(node.right)
            stack.append(node.left)
        elif isinstance(node, Parenthesized):
            stack.append(node.child)


def columns_referenced(ast: Node) -> list[str]:
    """Column names in left-to-right order, without duplicates."""
    seen = {}
    for node in walk(ast):
        if isinstance(node, (Comparison, InSet)):
            seen.setdefault(node.column)
    return list(seen)


def references(ast: Node, column: str, value=None) -> bool:
    """True if some atom mentions ``column`` (and, if given, the literal ``value``)."""
    for node in walk(ast):
        if isinstance(node, Comparison) and node.column == column:
            if value is None or _literal_key(node.literal) == _literal_key(value):
                return True
        elif isinstance(node, InSet) and node.column == column:
            if value is None or _literal_key(value) in {_literal_key(v) for v in node.values}:
                return True
    return False


def _literal_key(v):
    if _is_number(v):
        return ("n", float(v))
    if isinstance(v, bool):
        return ("b", v)
    return ("s", str(v))


def count_criteria(ast: Node) -> int:
    """Number of ``and`` nodes plus one; ``or`` nodes are not counted."""
    return sum(isinstance(n, And) for n in walk(ast)) + 1


def conjoin(nodes: list[Node]) -> Node:
    """Left-nested conjunction of ``nodes``."""
    if not nodes:
        raise ValueError("conjoin needs at least one node")
    out = nodes[0]
    for node in nodes[1:]:
        out = And(out, node)
    return out


# -- rendering ---------------------------------------------------------------

def render_literal(value: Literal) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if not np.isfinite(value):
            raise ValueError(f"non-finite literal {value!r}")
        return repr(value)
    return json.dumps(value, ensure_ascii=False)


def _needs_parens(parent: Node, child: Node, right: bool) -> bool:
    if not isinstance(child, (And, Or)):
        return False
    return type(child) is not type(parent) or right


def canonicalize(ast: Node) -> Node:
    """Drop :class:`Parenthesized` wrappers; tree shape already encodes grouping.

    The result is exactly what :func:`parse_predicate` returns for ``render(ast)``.
    """
    if isinstance(ast, Parenthesized):
        return canonicalize(ast.child)
    if isinstance(ast, (And, Or)):
        return type(ast)(canonicalize(ast.left), canonicalize(ast.right))
    return ast


def render(ast: Node) -> str:
    if isinstance(ast, Comparison):
        return f"{ast.column} {ast.op} {render_literal(ast.literal)}"
    if isinstance(ast, InSet):
        return f"{ast.column} in [{', '.join(render_literal(v) for v in ast.values)}]"
    if isinstance(ast, Parenthesized):
        return f"({render(ast.child)})"
    word = "and" if isinstance(ast, And) else "or"
    left, right = render(ast.left), render(ast.right)
    if _needs_parens(ast, ast.left, right=False):
        left = f"({left})"
    if _needs_parens(ast, ast.right, right=True):
        right = f"({right})"
    return f"{left} {word} {right}"


# -- evaluation --------------------------------------------------------------

def _categorical_key(value) -> str:
    if _is_number(value):
        return format_value(value, ColumnKind.NUMERIC)
    return str(value)


def _atom_mask(node: Comparison | InSet, dataset: Dataset) -> np.ndarray:
    col = dataset.column(node.column)
    values = col.values
    if isinstance(node, InSet):
        if col.kind is ColumnKind.NUMERIC:
            return np.isin(values, [float(v) for v in node.values])
        if col.kind is ColumnKind.BOOLEAN:
            return np.isin(values, [parse_bool_token(v) for v in node.values])
        return np.isin(values, [_categorical_key(v) for v in node.values])

    if col.kind is ColumnKind.NUMERIC:
        lit = float(node.literal)
    elif col.kind is ColumnKind.BOOLEAN:
        lit = parse_bool_token(node.literal)
    else:
        lit = _categorical_key(node.literal)
    op = node.op
    if op == "==":
        return values == lit
    if op == "!=":
        return values != lit
    if op == "<":
        return values < lit
    if op == "<=":
        return values <= lit
    if op == ">":
        return values > lit
    return values >= lit


def predicate_mask(ast: Node, dataset: Dataset) -> np.ndarray:
    if isinstance(ast, (Comparison, InSet)):
        return np.asarray(_atom_mask(ast, dataset), dtype=bool)
    if isinstance(ast, Parenthesized):
        return predicate_mask(ast.child, dataset)
    left = predicate_mask(ast.left, dataset)
    right = predicate_mask(ast.right, dataset)
    return left & right if isinstance(ast, And) else left | right


def eval_predicate(ast: Node, dataset: Dataset) -> Slice:
    return Slice(ast, np.flatnonzero(predicate_mask(ast, dataset)))
