"""Filter expression language: parser, type checker, evaluator, unparser.

One textual filter form is shared by episode queries, rule cohorts, the HTTP
API (`filter` query parameter, URL-encoded) and the dashboard's filter
tokens. Grammar, tightest first: NOT > AND > OR, left-associative, with
parentheses. Keywords are case-insensitive; field names are case-sensitive.
String literals are double-quoted with backslash escapes; numbers are
decimals.

Comparisons against absent values (e.g. `los` of an open episode) evaluate
false; NOT of such a comparison is therefore true.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Optional, Union

from .model import EpisodeOfCare, Patient

NUMERIC = "numeric"
STRING = "string"
BOOLEAN = "boolean"

FIELD_TYPES = {
    "los": NUMERIC,
    "age": NUMERIC,
    "total_charges": NUMERIC,
    "total_costs": NUMERIC,
    "contribution_margin": NUMERIC,
    "department": STRING,
    "gender": STRING,
    "procedure": STRING,
    "diagnosis": STRING,
    "died": BOOLEAN,
    "open": BOOLEAN,
}

NUMERIC_OPS = ("=", "!=", "<", "<=", ">", ">=")
EQUALITY_OPS = ("=", "!=")


class FilterError(ValueError):
    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message)
        self.offset = offset


class FilterSyntaxError(FilterError):
    def __init__(self, message: str, offset: int, expected: tuple = ()):
        super().__init__(message, offset)
        self.expected = tuple(expected)


class FilterSemanticError(FilterError):
    pass


@dataclass(frozen=True)
class Comparison:
    field: str
    op: str
    value: Union[Decimal, str, bool]


@dataclass(frozen=True)
class And:
    left: "FilterAst"
    right: "FilterAst"


@dataclass(frozen=True)
class Or:
    left: "FilterAst"
    right: "FilterAst"


@dataclass(frozen=True)
class Not:
    operand: "FilterAst"


FilterAst = Union[Comparison, And, Or, Not]

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<op><=|>=|!=|=|<|>)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<number>-?\d+(\.\d+)?)
  | (?P<string>"(\\.|[^"\\])*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
""", re.VERBOSE)

_KEYWORDS = {"and", "or", "not", "true", "false"}


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise FilterSyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            kind = m.lastgroup
            value = m.group()
            if kind == "ident" and value.lower() in _KEYWORDS:
                kind = value.lower()
            tokens.append((kind, value, pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, kind, expected_desc):
        tok = self.peek()
        if tok[0] != kind:
            raise FilterSyntaxError(
                f"expected {expected_desc}, found {tok[1] or 'end of input'!r}",
                tok[2], expected=(expected_desc,))
        return self.take()

    def parse_expr(self):
        node = self.parse_and()
        while self.peek()[0] == "or":
            self.take()
            node = Or(node, self.parse_and())
        return node

    def parse_and(self):
        node = self.parse_unary()
        while self.peek()[0] == "and":
            self.take()
            node = And(node, self.parse_unary())
        return node

    def parse_unary(self):
        if self.peek()[0] == "not":
            self.take()
            return Not(self.parse_unary())
        return self.parse_primary()

    def parse_primary(self):
        kind, value, offset = self.peek()
        if kind == "lparen":
            self.take()
            node = self.parse_expr()
            self.expect("rparen", ")")
            return node
        if kind == "ident":
            return self.parse_comparison()
        raise FilterSyntaxError(
            f"expected a field name or '(', found {value or 'end of input'!r}",
            offset, expected=("field name", "("))

    def parse_comparison(self):
        _, fname, foffset = self.expect("ident", "field name")
        if fname not in FIELD_TYPES:
            raise FilterSemanticError(f"unknown field {fname!r}", foffset)
        _, op, _ = self.expect("op", "comparison operator")
        kind, raw, loffset = self.take()
        ftype = FIELD_TYPES[fname]
        if kind == "number":
            literal = Decimal(raw)
            ltype = NUMERIC
        elif kind == "string":
            literal = _unescape(raw)
            ltype = STRING
        elif kind in ("true", "false"):
            literal = kind == "true"
            ltype = BOOLEAN
        else:
            raise FilterSyntaxError(
                f"expected a literal, found {raw or 'end of input'!r}",
                loffset, expected=("number", "string", "true", "false"))
        if ltype != ftype:
            raise FilterSemanticError(
                f"field {fname!r} is {ftype} but literal is {ltype}", loffset)
        allowed = NUMERIC_OPS if ftype == NUMERIC else EQUALITY_OPS
        if op not in allowed:
            raise FilterSemanticError(
                f"operator {op!r} not allowed on {ftype} field {fname!r}", foffset)
        return Comparison(fname, op, literal)


def _unescape(raw: str) -> str:
    body = raw[1:-1]
    out = []
    i = 0
    while i < len(body):
        c = body[i]
        if c == "\\" and i + 1 < len(body):
            out.append(body[i + 1])
            i += 2
        else:
            out.append(c)
            i += 1
    return "".join(out)


def _escape(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def parse(text: str) -> FilterAst:
    parser = _Parser(_tokenize(text))
    node = parser.parse_expr()
    tok = parser.peek()
    if tok[0] != "eof":
        raise FilterSyntaxError(f"trailing input {tok[1]!r}", tok[2], expected=("end of input",))
    return node


def unparse(ast: FilterAst) -> str:
    if isinstance(ast, Comparison):
        v = ast.value
        if isinstance(v, bool):
            lit = "true" if v else "false"
        elif isinstance(v, Decimal):
            lit = str(v)
        else:
            lit = _escape(v)
        return f"{ast.field} {ast.op} {lit}"
    if isinstance(ast, And):
        return f"({unparse(ast.left)} AND {unparse(ast.right)})"
    if isinstance(ast, Or):
        return f"({unparse(ast.left)} OR {unparse(ast.right)})"
    if isinstance(ast, Not):
        return f"(NOT {unparse(ast.operand)})"
    raise TypeError(f"not a filter AST node: {ast!r}")


def _whole_years(birth, at) -> int:
    years = at.year - birth.year
    if (at.month, at.day) < (birth.month, birth.day):
        years -= 1
    return years


def _field_value(field: str, e: EpisodeOfCare, p: Optional[Patient]):
    """Current value of a scalar field, or None when absent."""
    if field == "los":
        return e.derived.length_of_stay_days
    if field == "age":
        if p is None or e.admission_time is None:
            return None
        return _whole_years(p.birth_date, e.admission_time.date())
    if field == "total_charges":
        return e.derived.total_charges
    if field == "total_costs":
        return e.derived.total_costs
    if field == "contribution_margin":
        return e.derived.contribution_margin
    if field == "department":
        return e.primary_department
    if field == "gender":
        return p.gender if p is not None else None
    if field == "died":
        return e.derived.died
    if field == "open":
        return e.open
    raise FilterSemanticError(f"unknown field {field!r}")


def _coded_values(event_type: str, e: EpisodeOfCare):
    vals = set()
    for ev in e.events:
        if ev.event_type == event_type:
            for key in ("code", "name"):
                v = ev.attributes.get(key)
                if isinstance(v, str):
                    vals.add(v)
    return vals


def evaluate(ast: FilterAst, e: EpisodeOfCare, p: Optional[Patient] = None) -> bool:
    if isinstance(ast, And):
        return evaluate(ast.left, e, p) and evaluate(ast.right, e, p)
    if isinstance(ast, Or):
        return evaluate(ast.left, e, p) or evaluate(ast.right, e, p)
    if isinstance(ast, Not):
        return not evaluate(ast.operand, e, p)
    if isinstance(ast, Comparison):
        if ast.field in ("procedure", "diagnosis"):
            etype = "PROCEDURE" if ast.field == "procedure" else "DIAGNOSIS"
            vals = _coded_values(etype, e)
            if not vals:
                return False
            return (ast.value in vals) if ast.op == "=" else (ast.value not in vals)
        value = _field_value(ast.field, e, p)
        if value is None:
            return False
        if isinstance(ast.value, bool):
            return (value == ast.value) if ast.op == "=" else (value != ast.value)
        if isinstance(ast.value, Decimal):
            try:
                v = Decimal(str(value))
            except InvalidOperation:
                return False
            return _compare(v, ast.op, ast.value)
        return _compare(value, ast.op, ast.value) if ast.op in EQUALITY_OPS else False
    raise TypeError(f"not a filter AST node: {ast!r}")


def _compare(a, op, b) -> bool:
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b
    if op == "<=":
        return a <= b
    if op == ">":
        return a > b
    if op == ">=":
        return a >= b
    raise ValueError(f"unknown operator {op!r}")
