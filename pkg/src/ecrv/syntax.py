"""Tokenizer, parser and printer for the clause syntax.

The surface language is the logic-programming clause syntax used by the
bolus model: ``head.`` or ``head :- lit, lit, ... .`` with ``%`` line
comments, CLP(Q)-style constraint operators (``#=``, ``#<``, ``#=<``, ``#>``,
``#>=``, ``#\\=``) and ``not`` for negation.

Terms come back as :mod:`ecrv.terms` values: arithmetic and relational
operators are ``Struct`` nodes (``Struct('+', (a, b))``); numeric literals are
``Fraction``.  A division of two numeric literals is folded into a single
rational constant so ``1/3`` stays exact through parse/print round trips.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction

from .terms import Struct, Var, format_number, is_number

RELOPS = ("#=<", "#>=", "#\\=", "#=", "#<", "#>", "=<", ">=", "\\=", "=", "<", ">")
ARITH = ("+", "-", "*", "/")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>%[^\n]*)
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<atom>[a-z][A-Za-z0-9_]*)
  | (?P<qatom>'(?:[^'\\]|\\.)*')
  | (?P<op>:-|\#=<|\#>=|\#\\=|\#=|\#<|\#>|=<|>=|\\=|=|<|>|\+|-|\*|/|\(|\)|,|\.)
    """,
    re.VERBOSE,
)


class ParseError(Exception):
    """Syntax error with 1-based position and the set of tokens that would fit."""

    def __init__(self, message: str, line: int, col: int, expected: tuple[str, ...] = ()):
        self.message = message
        self.line = line
        self.col = col
        self.expected = tuple(expected)
        hint = f" (expected {', '.join(expected)})" if expected else ""
        super().__init__(f"{line}:{col}: {message}{hint}")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        value = m.group()
        if kind not in ("ws", "comment"):
            if kind == "qatom":
                kind, value = "atom", value[1:-1]
            tokens.append(Token(kind, value, line, pos - line_start + 1))
        nl = value.count("\n") if kind in ("ws",) else 0
        if nl:
            line += nl
            line_start = pos + value.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


@dataclass
class Clause:
    """One parsed clause.  ``body_pos`` holds (line, col) of every body literal."""

    head: object
    body: tuple = ()
    line: int = 0
    col: int = 0
    body_pos: tuple = ()
    varnames: dict = field(default_factory=dict)

    def __str__(self) -> str:
        return format_clause(self)


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.vars: dict[str, Var] = {}

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg: str, expected=()) -> ParseError:
        t = self.tok
        where = "end of input" if t.kind == "eof" else repr(t.text)
        return ParseError(f"{msg} at {where}", t.line, t.col, tuple(expected))

    def expect(self, text: str) -> Token:
        if self.tok.text != text or self.tok.kind not in ("op",):
            raise self.error(f"expected {text!r}", (text,))
        return self.advance()

    # -- clauses ------------------------------------------------------

    def clauses(self) -> list[Clause]:
        out = []
        while self.tok.kind != "eof":
            out.append(self.clause())
        return out

    def clause(self) -> Clause:
        self.vars = {}
        start = self.tok
        head = self.term()
        if not isinstance(head, Struct):
            raise ParseError("clause head must be an atom or compound term", start.line, start.col)
        body, pos = (), ()
        if self.tok.kind == "op" and self.tok.text == ":-":
            self.advance()
            body, pos = self.body()
        if not (self.tok.kind == "op" and self.tok.text == "."):
            expected = (".", ":-") if not body else (".", ",")
            raise self.error("expected end of clause", expected)
        self.advance()
        names = {v: n for n, v in self.vars.items()}
        return Clause(head, tuple(body), start.line, start.col, tuple(pos), names)

    def body(self):
        lits, pos = [], []
        while True:
            t = self.tok
            lits.append(self.literal())
            pos.append((t.line, t.col))
            if self.tok.kind == "op" and self.tok.text == ",":
                self.advance()
                continue
            return lits, pos

    def literal(self):
        t = self.tok
        if t.kind == "atom" and t.text == "not" and self.toks[self.i + 1].text != "(" \
                and self.toks[self.i + 1].kind in ("atom", "var"):
            self.advance()
            inner = self.term()
            return Struct("not", (inner,))
        left = self.expr()
        if self.tok.kind == "op" and self.tok.text in RELOPS:
            op = self.advance().text
            right = self.expr()
            return Struct(op, (left, right))
        return left

    # -- terms and expressions ----------------------------------------

    def term(self):
        return self.expr()

    def expr(self):
        left = self.mul()
        while self.tok.kind == "op" and self.tok.text in ("+", "-"):
            op = self.advance().text
            right = self.mul()
            left = Struct(op, (left, right))
        return left

    def mul(self):
        left = self.unary()
        while self.tok.kind == "op" and self.tok.text in ("*", "/"):
            op = self.advance().text
            right = self.unary()
            if op == "/" and is_number(left) and is_number(right) and right != 0:
                left = Fraction(left) / Fraction(right)
            else:
                left = Struct(op, (left, right))
        return left

    def unary(self):
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            inner = self.unary()
            if is_number(inner):
                return -inner
            return Struct("-", (inner,))
        return self.primary()

    def primary(self):
        t = self.tok
        if t.kind == "number":
            self.advance()
            return Fraction(Decimal(t.text))
        if t.kind == "var":
            self.advance()
            if t.text == "_":
                return Var("_")
            v = self.vars.get(t.text)
            if v is None:
                v = self.vars[t.text] = Var(t.text)
            return v
        if t.kind == "atom":
            self.advance()
            if self.tok.kind == "op" and self.tok.text == "(":
                self.advance()
                args = [self.expr()]
                while self.tok.kind == "op" and self.tok.text == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                return Struct(t.text, tuple(args))
            return Struct(t.text, ())
        if t.kind == "op" and t.text == "(":
            self.advance()
            inner = self.expr()
            self.expect(")")
            return inner
        raise self.error("expected a term", ("number", "variable", "atom", "("))


def parse_clauses(text: str) -> list[Clause]:
    """Parse a whole program; raises :class:`ParseError` (never a partial result)."""
    return _Parser(text).clauses()


def parse_body(text: str) -> tuple[tuple, dict[str, Var]]:
    """Parse a goal: comma-separated literals with an optional final ``.``."""
    p = _Parser(text)
    if p.tok.kind == "eof":
        raise p.error("empty goal", ("literal",))
    lits, _ = p.body()
    if p.tok.kind == "op" and p.tok.text == ".":
        p.advance()
    if p.tok.kind != "eof":
        raise p.error("unexpected trailing input", (",", ".", "end of input"))
    return tuple(lits), dict(p.vars)


def parse_term(text: str, varmap: dict[str, Var] | None = None):
    p = _Parser(text)
    if varmap is not None:
        p.vars = varmap
    t = p.expr()
    if p.tok.kind != "eof":
        raise p.error("unexpected trailing input", ("end of input",))
    return t


# -- printing ---------------------------------------------------------------

_PREC = {"+": 500, "-": 500, "*": 400, "/": 400}
_REL_PREC = 700


def format_term(t, names: dict | None = None, prec: int = 1200) -> str:
    if isinstance(t, Var):
        if names and t in names:
            return names[t]
        return repr(t)
    if is_number(t):
        s = format_number(t)
        if prec < 1000 and (t < 0 or "/" in s):
            return f"({s})"
        return s
    if isinstance(t, Struct):
        f, args = t.functor, t.args
        if f in _PREC and len(args) == 2:
            p = _PREC[f]
            s = f"{format_term(args[0], names, p)} {f} {format_term(args[1], names, p - 1)}"
            return f"({s})" if p > prec else s
        if f == "-" and len(args) == 1:
            return f"-{format_term(args[0], names, 200)}"
        if f in RELOPS and len(args) == 2:
            s = f"{format_term(args[0], names, 699)} {f} {format_term(args[1], names, 699)}"
            return f"({s})" if _REL_PREC > prec else s
        if f == "not" and len(args) == 1:
            return f"not {format_term(args[0], names, 999)}"
        if not args:
            return _atom_text(f)
        inner = ", ".join(format_term(a, names, 999) for a in args)
        return f"{_atom_text(f)}({inner})"
    # Lin values or anything else
    from .terms import format_lin, Lin
    if isinstance(t, Lin):
        s = format_lin(t, names)
        return f"({s})" if prec < 1000 else s
    return str(t)


def _atom_text(name: str) -> str:
    if re.fullmatch(r"[a-z][A-Za-z0-9_]*", name):
        return name
    return "'" + name.replace("'", "\\'") + "'"


def format_clause(c: Clause) -> str:
    head = format_term(c.head, c.varnames)
    if not c.body:
        return head + "."
    body = ", ".join(format_term(lit, c.varnames, 999) for lit in c.body)
    return f"{head} :- {body}."


def structurally_equal(a, b, mapping: dict | None = None) -> bool:
    """Equality up to consistent variable renaming."""
    mapping = {} if mapping is None else mapping
    if isinstance(a, Var) and isinstance(b, Var):
        if a in mapping:
            return mapping[a] is b
        if b in mapping.values():
            return False
        mapping[a] = b
        return True
    if isinstance(a, Struct) and isinstance(b, Struct):
        return (a.functor == b.functor and len(a.args) == len(b.args)
                and all(structurally_equal(x, y, mapping) for x, y in zip(a.args, b.args)))
    if is_number(a) and is_number(b):
        return Fraction(a) == Fraction(b)
    return False


def clauses_equal(a: Clause, b: Clause) -> bool:
    mapping: dict = {}
    return (structurally_equal(a.head, b.head, mapping) and len(a.body) == len(b.body)
            and all(structurally_equal(x, y, mapping) for x, y in zip(a.body, b.body)))
