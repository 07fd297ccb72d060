"""Term representation shared by the parser, the constraint store and the engine.

Terms are plain Python values:

* ``Fraction`` for numeric constants (time, quantities);
* :class:`Var` for logic variables;
* :class:`Struct` for atoms and compound terms (an atom is a ``Struct`` with no args);
* :class:`Lin` for linear expressions over variables with rational coefficients.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from typing import Iterable, Mapping, Union

_ids = itertools.count(1)


class Var:
    """A logic variable. Identity is the object; ``name`` is only for display."""

    __slots__ = ("name", "id")

    def __init__(self, name: str = "_"):
        self.name = name
        self.id = next(_ids)

    def __repr__(self) -> str:
        return f"{self.name}" if not self.name.startswith("_") else f"_G{self.id}"

    def __lt__(self, other: "Var") -> bool:
        return self.id < other.id


class Struct:
    """Atom (no args) or compound term ``functor(args...)``."""

    __slots__ = ("functor", "args", "_hash")

    def __init__(self, functor: str, args: tuple = ()):
        self.functor = functor
        self.args = tuple(args)
        self._hash = None

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def key(self) -> tuple[str, int]:
        return (self.functor, len(self.args))

    def __eq__(self, other) -> bool:
        if self is other:
            return True
        if not isinstance(other, Struct):
            return False
        return self.functor == other.functor and self.args == other.args

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.functor, self.args))
        return self._hash

    def __repr__(self) -> str:
        if not self.args:
            return self.functor
        return f"{self.functor}({', '.join(map(repr, self.args))})"


_ZERO = Fraction(0)
_ONE = Fraction(1)


def _frac(x) -> Fraction:
    return x if type(x) is Fraction else Fraction(x)


class Lin:
    """Immutable linear expression ``sum(coef * var) + const``.

    Zero coefficients are never stored.  Expressions without variables are
    normally collapsed to a plain ``Fraction`` by :func:`lin_value`.
    """

    __slots__ = ("coeffs", "const", "_hash")

    def __init__(self, coeffs: Mapping[Var, Fraction] | None = None, const=0):
        self.coeffs = {v: _frac(c) for v, c in coeffs.items() if c} if coeffs else {}
        self.const = _frac(const)
        self._hash = None

    @classmethod
    def _raw(cls, coeffs: dict, const: Fraction) -> "Lin":
        # trusted constructor: Fraction values, no zero coefficients
        out = cls.__new__(cls)
        out.coeffs = coeffs
        out.const = const
        out._hash = None
        return out

    @staticmethod
    def of(x: "Numeric") -> "Lin":
        if isinstance(x, Lin):
            return x
        if type(x) is Fraction:
            return Lin._raw({}, x)
        if isinstance(x, Var):
            return Lin._raw({x: _ONE}, _ZERO)
        return Lin(None, x)

    def is_const(self) -> bool:
        return not self.coeffs

    def vars(self) -> set[Var]:
        return set(self.coeffs)

    def coef(self, v: Var) -> Fraction:
        return self.coeffs.get(v, Fraction(0))

    def __add__(self, other: "Numeric") -> "Lin":
        other = Lin.of(other)
        coeffs = dict(self.coeffs)
        for v, c in other.coeffs.items():
            s = coeffs.get(v, 0) + c
            if s:
                coeffs[v] = s
            else:
                coeffs.pop(v, None)
        return Lin._raw(coeffs, self.const + other.const)

    __radd__ = __add__

    def __neg__(self) -> "Lin":
        return Lin._raw({v: -c for v, c in self.coeffs.items()}, -self.const)

    def __sub__(self, other: "Numeric") -> "Lin":
        other = Lin.of(other)
        coeffs = dict(self.coeffs)
        for v, c in other.coeffs.items():
            d = coeffs.get(v, 0) - c
            if d:
                coeffs[v] = d
            else:
                coeffs.pop(v, None)
        return Lin._raw(coeffs, self.const - other.const)

    def __rsub__(self, other: "Numeric") -> "Lin":
        return Lin.of(other) - self

    def scale(self, k) -> "Lin":
        k = _frac(k)
        if k == 1:
            return self
        if not k:
            return Lin._raw({}, _ZERO)
        return Lin._raw({v: c * k for v, c in self.coeffs.items()}, self.const * k)

    def __mul__(self, k) -> "Lin":
        if isinstance(k, (Lin, Var)):
            return NotImplemented
        return self.scale(k)

    __rmul__ = __mul__

    def subst(self, mapping: Mapping[Var, "Numeric"]) -> "Lin":
        if not any(v in mapping for v in self.coeffs):
            return self
        out = Lin(None, self.const)
        for v, c in self.coeffs.items():
            if v in mapping:
                out = out + Lin.of(mapping[v]).scale(c)
            else:
                out = out + Lin({v: c})
        return out

    def evaluate(self, assignment: Mapping[Var, Fraction]) -> Fraction:
        return self.const + sum((c * assignment[v] for v, c in self.coeffs.items()), Fraction(0))

    def _items(self) -> tuple:
        return tuple(sorted(((v.id, c) for v, c in self.coeffs.items())))

    def __eq__(self, other) -> bool:
        if type(other) is Fraction or type(other) is int:
            return not self.coeffs and self.const == other
        if not isinstance(other, Lin):
            return False
        return self.const == other.const and self.coeffs == other.coeffs

    def __hash__(self) -> int:
        if self._hash is None:
            if not self.coeffs:
                self._hash = hash(self.const)
            else:
                self._hash = hash((self._items(), self.const))
        return self._hash

    def __repr__(self) -> str:
        return format_lin(self)


Numeric = Union[Fraction, int, Var, Lin]
Term = Union[Fraction, Var, Struct, Lin]


def lin_value(x: "Numeric") -> "Fraction | Lin":
    """Normalize to ``Fraction`` when the expression is constant."""
    if isinstance(x, Lin):
        return x.const if not x.coeffs else x
    if isinstance(x, Var):
        return Lin.of(x)
    return Fraction(x)


def is_number(t) -> bool:
    # exact type tests: isinstance against Fraction goes through the slow ABC machinery
    return type(t) is Fraction or type(t) is int


def format_number(q: Fraction) -> str:
    q = Fraction(q)
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def var_label(v: Var, names: Mapping[Var, str] | None = None) -> str:
    if names and v in names:
        return names[v]
    return repr(v)


def format_lin(e: "Lin | Fraction", names: Mapping[Var, str] | None = None) -> str:
    """Human/DSL rendering of a linear expression, e.g. ``5*T - 10``."""
    if not isinstance(e, Lin):
        return format_number(e)
    parts: list[str] = []
    for v, c in sorted(e.coeffs.items(), key=lambda vc: vc[0].id):
        name = var_label(v, names)
        mag = abs(c)
        body = name if mag == 1 else f"{format_coef(mag)}*{name}"
        if not parts:
            parts.append(body if c > 0 else f"-{body}")
        else:
            parts.append(("+ " if c > 0 else "- ") + body)
    if e.const != 0 or not parts:
        if not parts:
            parts.append(format_number(e.const))
        else:
            parts.append(("+ " if e.const > 0 else "- ") + format_coef(abs(e.const)))
    return " ".join(parts)


def format_coef(q: Fraction) -> str:
    s = format_number(q)
    return f"({s})" if "/" in s else s


def term_vars(t, acc: set | None = None) -> set:
    acc = set() if acc is None else acc
    if isinstance(t, Var):
        acc.add(t)
    elif isinstance(t, Struct):
        for a in t.args:
            term_vars(a, acc)
    elif isinstance(t, Lin):
        acc.update(t.coeffs)
    return acc


def ordered_vars(t, acc: list | None = None) -> list:
    """Variables of ``t`` in first-occurrence order."""
    acc = [] if acc is None else acc
    if isinstance(t, Var):
        if t not in acc:
            acc.append(t)
    elif isinstance(t, Struct):
        for a in t.args:
            ordered_vars(a, acc)
    elif isinstance(t, Lin):
        for v in sorted(t.coeffs, key=lambda v: v.id):
            if v not in acc:
                acc.append(v)
    return acc


def rename(t, mapping: dict):
    """Copy ``t`` replacing variables through ``mapping`` (filled lazily)."""
    if isinstance(t, Var):
        nv = mapping.get(t)
        if nv is None:
            nv = mapping[t] = Var(t.name)
        return nv
    if isinstance(t, Struct):
        if not t.args:
            return t
        return Struct(t.functor, tuple(rename(a, mapping) for a in t.args))
    if isinstance(t, Lin):
        return Lin({rename(v, mapping): c for v, c in t.coeffs.items()}, t.const)
    return t


def is_ground(t) -> bool:
    if isinstance(t, Var):
        return False
    if isinstance(t, Struct):
        return all(is_ground(a) for a in t.args)
    if isinstance(t, Lin):
        return not t.coeffs
    return True


def atom(name: str) -> Struct:
    return Struct(name, ())


def iter_structs(t) -> Iterable[Struct]:
    if isinstance(t, Struct):
        yield t
        for a in t.args:
            yield from iter_structs(a)
