"""Mini-language for deep-dive dimension filters.

Grammar::

    expr   := clause ("AND" clause)*
    clause := NAME OP LITERAL
    OP     := "=" | "!=" | "<" | "<=" | ">" | ">="

Names may contain ``-`` and ``.`` (``client-version``).  Literals are
numbers, quoted strings, or bare words.  Names are checked against the
catalog when the expression is bound, not here.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal

from ..bsi import CompareOp

OPERATORS = {
    "=": CompareOp.EQ,
    "!=": CompareOp.NE,
    "<": CompareOp.LT,
    "<=": CompareOp.LE,
    ">": CompareOp.GT,
    ">=": CompareOp.GE,
}

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*")
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?")
_OPCHARS = re.compile(r"[=!<>]+")
_STRING = re.compile(r"'((?:[^']|'')*)'")


class PredicateSyntaxError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownOperatorError(PredicateSyntaxError):
    pass


@dataclass(frozen=True)
class Clause:
    name: str
    op: str
    literal: Decimal | str

    @property
    def compare_op(self) -> CompareOp:
        return OPERATORS[self.op]

    def __str__(self) -> str:
        if isinstance(self.literal, str):
            lit = "'" + self.literal.replace("'", "''") + "'"
        else:
            lit = str(self.literal)
        return f"{self.name} {self.op} {lit}"


@dataclass(frozen=True)
class PredicateExpr:
    clauses: tuple[Clause, ...]

    def __str__(self) -> str:
        return " AND ".join(str(c) for c in self.clauses)

    def names(self) -> list[str]:
        return sorted({c.name for c in self.clauses})


def _skip_ws(text: str, pos: int) -> int:
    while pos < len(text) and text[pos].isspace():
        pos += 1
    return pos


def parse_predicate(text: str) -> PredicateExpr:
    clauses = []
    pos = _skip_ws(text, 0)
    while True:
        m = _NAME.match(text, pos)
        if not m or m.group().upper() == "AND":
            raise PredicateSyntaxError("expected dimension name", pos)
        name = m.group()
        pos = _skip_ws(text, m.end())

        m = _OPCHARS.match(text, pos)
        if not m:
            raise PredicateSyntaxError("expected comparison operator", pos)
        if m.group() not in OPERATORS:
            raise UnknownOperatorError(f"unknown operator {m.group()!r}", pos)
        op = m.group()
        pos = _skip_ws(text, m.end())

        if m := _NUMBER.match(text, pos):
            literal: Decimal | str = Decimal(m.group())
        elif m := _STRING.match(text, pos):
            literal = m.group(1).replace("''", "'")
        elif (m := _NAME.match(text, pos)) and m.group().upper() != "AND":
            literal = m.group()
        else:
            raise PredicateSyntaxError("expected literal", pos)
        pos = _skip_ws(text, m.end())
        clauses.append(Clause(name, op, literal))

        if pos == len(text):
            break
        m = _NAME.match(text, pos)
        if not m or m.group().upper() != "AND":
            raise PredicateSyntaxError("expected AND or end of input", pos)
        pos = _skip_ws(text, m.end())
    return PredicateExpr(tuple(clauses))
