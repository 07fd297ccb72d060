"""Exact linear constraints over the rationals.

A :class:`ConstraintStore` holds a conjunction of linear equalities and
(strict or non-strict) inequalities.  Equalities are kept in solved form
(``var = linear expression`` over the remaining free variables), inequalities
are decided with Fourier-Motzkin elimination tracking strictness, so open
intervals are handled exactly.  Every store object is satisfiable: adding a
constraint that makes the conjunction infeasible returns ``None``.

Disequalities (``!=``) never enter a store; callers split them into ``<`` and
``>`` cases, which keeps every store convex.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .terms import Lin, Var, format_lin, format_number, var_label


class NonLinear(ValueError):
    """An arithmetic expression multiplies two non-constant terms."""


class DegenerateSlope(ValueError):
    """A crossing equation holds identically, so it has infinitely many solutions."""


class Unsatisfiable(Exception):
    """Raised by :func:`assert_constraint` when the conjunction becomes infeasible."""


OPS = ("=", "<", "<=", "!=")
_SURFACE = {"=": "#=", "<": "#<", "<=": "#=<", "!=": "#\\=", ">": "#>", ">=": "#>="}


@dataclass(frozen=True)
class LinConstraint:
    """``expr op 0`` with ``op`` one of ``=``, ``<``, ``<=``, ``!=``."""

    expr: Lin
    op: str

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"bad relop {self.op!r}")

    @staticmethod
    def make(lhs, op: str, rhs) -> "LinConstraint":
        lhs, rhs = Lin.of(lhs), Lin.of(rhs)
        if op == ">":
            return LinConstraint(rhs - lhs, "<").normalized()
        if op == ">=":
            return LinConstraint(rhs - lhs, "<=").normalized()
        return LinConstraint(lhs - rhs, op).normalized()

    def normalized(self) -> "LinConstraint":
        e = self.expr
        if not e.coeffs:
            return self
        lead = e.coeffs[min(e.coeffs, key=lambda v: v.id)]
        k = abs(lead) if self.op in ("<", "<=") else lead
        if k == 1:
            return self
        return LinConstraint(e.scale(1 / k), self.op)

    def vars(self) -> set[Var]:
        return set(self.expr.coeffs)

    def is_const(self) -> bool:
        return not self.expr.coeffs

    def truth(self) -> bool:
        """Truth value of a variable-free constraint."""
        return _holds(self.op, self.expr.const)

    def holds(self, assignment: Mapping[Var, Fraction]) -> bool:
        return _holds(self.op, self.expr.evaluate(assignment))

    def subst(self, mapping) -> "LinConstraint":
        return LinConstraint(self.expr.subst(mapping), self.op).normalized()

    def negation(self) -> list["LinConstraint"]:
        """Disjunction (list) of constraints equivalent to ``not self``."""
        e = self.expr
        if self.op == "<=":
            return [LinConstraint(-e, "<").normalized()]
        if self.op == "<":
            return [LinConstraint(-e, "<=").normalized()]
        if self.op == "=":
            return [LinConstraint(e, "<").normalized(), LinConstraint(-e, "<").normalized()]
        return [LinConstraint(e, "=").normalized()]

    def to_dsl(self, names: Mapping[Var, str] | None = None) -> str:
        """Render in the surface syntax, bounds first: ``2 #< T``, ``T #=< 7``."""
        e = self.expr
        if not e.coeffs:
            return f"{format_number(e.const)} {_SURFACE[self.op]} 0"
        if len(e.coeffs) == 1:
            (v, c), = e.coeffs.items()
            bound = format_number(-e.const / c)
            name = var_label(v, names)
            if self.op in ("=", "!="):
                return f"{name} {_SURFACE[self.op]} {bound}"
            if c > 0:
                return f"{name} {_SURFACE[self.op]} {bound}"
            return f"{bound} {_SURFACE[self.op]} {name}"
        op = self.op
        if all(c < 0 for c in e.coeffs.values()):
            e, op = -e, _flip(op)
        pos = Lin({v: c for v, c in e.coeffs.items() if c > 0})
        neg = Lin({v: -c for v, c in e.coeffs.items() if c < 0}, -e.const)
        return f"{format_lin(pos, names)} {_SURFACE[op]} {format_lin(neg, names)}"

    def __repr__(self) -> str:
        return self.to_dsl()


def _flip(op: str) -> str:
    return {"<": ">", "<=": ">=", "=": "=", "!=": "!="}[op]


def _holds(op: str, value: Fraction) -> bool:
    if op == "=":
        return value == 0
    if op == "<":
        return value < 0
    if op == "<=":
        return value <= 0
    return value != 0


# -- internal inequality rows: (coeffs dict, const, strict) meaning sum + const (<|<=) 0


def _row(c: LinConstraint):
    return (dict(c.expr.coeffs), c.expr.const, c.op == "<")


def _row_key(coeffs: dict):
    return tuple(sorted(((v.id, q) for v, q in coeffs.items())))


def _norm_row(row):
    coeffs, const, strict = row
    if not coeffs:
        return row
    lead = abs(coeffs[min(coeffs, key=lambda v: v.id)])
    if lead == 1:
        return row
    return ({v: q / lead for v, q in coeffs.items()}, const / lead, strict)


def _prune(rows):
    """Drop trivially true rows and keep only the tightest of parallel rows.

    Returns ``None`` when a variable-free row is false.
    """
    best: dict = {}
    for row in rows:
        coeffs, const, strict = _norm_row(row)
        if not coeffs:
            if const > 0 or (strict and const == 0):
                return None
            continue
        key = _row_key(coeffs)
        cur = best.get(key)
        if cur is None or const > cur[1] or (const == cur[1] and strict and not cur[2]):
            best[key] = (coeffs, const, strict)
    return list(best.values())


def _pick_var(rows, candidates=None):
    counts: dict = {}
    for coeffs, _, _ in rows:
        for v, q in coeffs.items():
            if candidates is not None and v not in candidates:
                continue
            p, n = counts.get(v, (0, 0))
            counts[v] = (p + 1, n) if q > 0 else (p, n + 1)
    if not counts:
        return None
    return min(counts, key=lambda v: (counts[v][0] * counts[v][1] - counts[v][0] - counts[v][1], v.id))


def _eliminate(rows, v):
    pos, neg, rest = [], [], []
    for row in rows:
        q = row[0].get(v, 0)
        if q > 0:
            pos.append(row)
        elif q < 0:
            neg.append(row)
        else:
            rest.append(row)
    for pc, pk, ps in pos:
        a = pc[v]
        for nc, nk, ns in neg:
            b = -nc[v]
            coeffs = {}
            for u, q in pc.items():
                if u is not v:
                    coeffs[u] = coeffs.get(u, 0) + q * b
            for u, q in nc.items():
                if u is not v:
                    coeffs[u] = coeffs.get(u, 0) + q * a
            coeffs = {u: q for u, q in coeffs.items() if q != 0}
            rest.append((coeffs, pk * b + nk * a, ps or ns))
    return _prune(rest)


def _bounds_feasible(rows):
    """Decide rows that are all single-variable bounds; ``None`` if some row is not."""
    lo: dict = {}
    hi: dict = {}
    for coeffs, const, strict in rows:
        if len(coeffs) != 1:
            return None
        (v, q), = coeffs.items()
        b = -const / q
        if q > 0:  # v < b or v <= b
            cur = hi.get(v)
            if cur is None or b < cur[0] or (b == cur[0] and strict):
                hi[v] = (b, strict)
        else:
            cur = lo.get(v)
            if cur is None or b > cur[0] or (b == cur[0] and strict):
                lo[v] = (b, strict)
    for v, (l, ls) in lo.items():
        h = hi.get(v)
        if h is not None and (l > h[0] or (l == h[0] and (ls or h[1]))):
            return False
    return True


def _feasible(rows) -> bool:
    quick = _bounds_feasible(rows)
    if quick is not None:
        return quick
    rows = _prune(rows)
    while rows:
        v = _pick_var(rows)
        if v is None:
            break
        rows = _eliminate(rows, v)
        if rows is None:
            return False
    return rows is not None


class ConstraintStore:
    """Satisfiable conjunction of linear constraints (value semantics)."""

    __slots__ = ("eqs", "rows", "_key", "_vars", "_row_keys")

    def __init__(self, eqs: dict | None = None, rows: list | None = None):
        # rows are always pruned (normalised, one per direction); eqs is never mutated in place
        self.eqs: dict[Var, Lin] = eqs or {}
        self.rows: list = rows or []
        self._key = None
        self._vars = None
        self._row_keys = None

    def _keys(self) -> dict:
        if self._row_keys is None:
            self._row_keys = {_row_key(r[0]): i for i, r in enumerate(self.rows)}
        return self._row_keys

    # -- construction -------------------------------------------------

    def add(self, c: LinConstraint) -> "ConstraintStore | None":
        """Return a new store entailing ``self`` and ``c``, or ``None`` if infeasible."""
        if c.op == "!=":
            raise ValueError("disequality must be split by the caller")
        expr = c.expr.subst(self.eqs) if self.eqs else c.expr
        if not expr.coeffs:
            return self if _holds(c.op, expr.const) else None
        if c.op == "=":
            return self._add_eq(expr)
        row = _norm_row((dict(expr.coeffs), expr.const, c.op == "<"))
        key = _row_key(row[0])
        keys = self._keys()
        i = keys.get(key)
        if i is None:
            rows = self.rows + [row]
            new_keys = {**keys, key: len(self.rows)}
        else:
            _, const, strict = self.rows[i]
            if const > row[1] or (const == row[1] and (strict or not row[2])):
                return self  # an existing parallel row is at least as tight
            rows = list(self.rows)
            rows[i] = row
            new_keys = keys
        if not _feasible(rows):
            return None
        out = ConstraintStore(self.eqs, rows)
        out._row_keys = new_keys
        return out

    def _add_eq(self, expr: Lin) -> "ConstraintStore | None":
        v = max(expr.coeffs, key=lambda u: u.id)
        c = expr.coeffs[v]
        rhs = Lin({u: -q / c for u, q in expr.coeffs.items() if u is not v}, -expr.const / c)
        sub = {v: rhs}
        eqs = {u: e.subst(sub) for u, e in self.eqs.items()}
        eqs[v] = rhs
        rows = []
        for coeffs, const, strict in self.rows:
            if v in coeffs:
                e = Lin(coeffs, const).subst(sub)
                rows.append((dict(e.coeffs), e.const, strict))
            else:
                rows.append((coeffs, const, strict))
        rows = _prune(rows)
        if rows is None or not _feasible(rows):
            return None
        return ConstraintStore(eqs, rows)

    def add_all(self, cs: Iterable[LinConstraint]) -> "ConstraintStore | None":
        store: ConstraintStore | None = self
        for c in cs:
            store = store.add(c)
            if store is None:
                return None
        return store

    def conjoin(self, other: "ConstraintStore") -> "ConstraintStore | None":
        if other is self or not other.eqs and not other.rows:
            return self
        return self.add_all(other.constraints())

    # -- queries ------------------------------------------------------

    def constraints(self) -> list[LinConstraint]:
        out = [LinConstraint(Lin.of(v) - e, "=").normalized() for v, e in self.eqs.items()]
        out += [LinConstraint(Lin(coeffs, const), "<" if strict else "<=").normalized()
                for coeffs, const, strict in self.rows]
        return out

    def vars(self) -> set[Var]:
        if self._vars is None:
            out = set(self.eqs)
            for e in self.eqs.values():
                out |= set(e.coeffs)
            for coeffs, _, _ in self.rows:
                out |= set(coeffs)
            self._vars = frozenset(out)
        return self._vars

    def mentions(self, v: Var) -> bool:
        return v in self.vars()

    def is_empty(self) -> bool:
        return not self.eqs and not self.rows

    def entails(self, c: LinConstraint) -> bool:
        if c.op == "!=":
            expr = c.expr.subst(self.eqs)
            if not expr.coeffs:
                return expr.const != 0
            return self.add(LinConstraint(expr, "=")) is None
        return all(self.add(d) is None for d in c.negation())

    def consistent_with(self, c: LinConstraint) -> bool:
        if c.op == "!=":
            return any(self.add(d) is not None for d in c.negation()[0].negation())
        return self.add(c) is not None

    def resolve(self, e) -> "Lin | Fraction":
        """Substitute solved equalities into ``e``; constant results become ``Fraction``."""
        e = Lin.of(e).subst(self.eqs)
        return e.const if not e.coeffs else e

    def value_of(self, v) -> Fraction | None:
        """The value of ``v`` (a var or expression) if the store fixes it."""
        e = self.resolve(v)
        if not isinstance(e, Lin):
            return e
        lo, lo_s, hi, hi_s = self.bounds(e)
        if lo is not None and lo == hi and not lo_s and not hi_s:
            return lo
        return None

    def bounds(self, e) -> tuple:
        """``(lo, lo_strict, hi, hi_strict)`` of expression ``e`` over the store (None = unbounded)."""
        e = self.resolve(e)
        if not isinstance(e, Lin):
            return (e, False, e, False)
        if len(e.coeffs) == 1 and all(len(r[0]) == 1 for r in self.rows):
            return self._box_bounds(e)
        probe = Var("_probe")
        store = self._add_eq(Lin.of(probe) - e)
        assert store is not None
        lo = hi = None
        lo_s = hi_s = False
        for c in store.project([probe]):
            q = c.expr.coef(probe)
            if q == 0:
                continue
            bound = -c.expr.const / q
            if c.op == "=":
                return (bound, False, bound, False)
            if q > 0:  # probe <(=) bound
                if hi is None or bound < hi or (bound == hi and c.op == "<"):
                    hi, hi_s = bound, c.op == "<"
            else:
                if lo is None or bound > lo or (bound == lo and c.op == "<"):
                    lo, lo_s = bound, c.op == "<"
        return (lo, lo_s, hi, hi_s)

    def _box_bounds(self, e: Lin) -> tuple:
        # every row bounds a single variable: read the bounds of q*v + k directly
        (v, q), = e.coeffs.items()
        lo = hi = None
        lo_s = hi_s = False
        for coeffs, const, strict in self.rows:
            a = coeffs.get(v)
            if a is None:
                continue
            b = -const / a
            if a > 0:
                if hi is None or b < hi or (b == hi and strict):
                    hi, hi_s = b, strict
            elif lo is None or b > lo or (b == lo and strict):
                lo, lo_s = b, strict
        if q < 0:
            lo, lo_s, hi, hi_s = hi, hi_s, lo, lo_s
        lo = None if lo is None else lo * q + e.const
        hi = None if hi is None else hi * q + e.const
        return (lo, lo_s, hi, hi_s)

    def project(self, keep: Iterable[Var], *, simplify: bool = True) -> list[LinConstraint]:
        """Constraints over ``keep`` only, with the same solution set as the
        store projected onto those variables (Fourier-Motzkin)."""
        keep = set(keep)
        eqs = dict(self.eqs)
        rows = [(dict(c), k, s) for c, k, s in self.rows]
        changed = True
        while changed:
            changed = False
            for v, e in list(eqs.items()):
                if v not in keep:
                    continue
                bad = sorted((u for u in e.coeffs if u not in keep), key=lambda u: u.id)
                if not bad:
                    continue
                y = bad[0]
                q = e.coeffs[y]
                # v = e  ->  y = (v - (e - q*y)) / q
                rest = Lin({u: c for u, c in e.coeffs.items() if u is not y}, e.const)
                ye = (Lin.of(v) - rest).scale(1 / q)
                del eqs[v]
                sub = {y: ye}
                eqs = {u: f.subst(sub) for u, f in eqs.items()}
                eqs[y] = ye
                new_rows = []
                for coeffs, const, strict in rows:
                    if y in coeffs:
                        f = Lin(coeffs, const).subst(sub)
                        new_rows.append((dict(f.coeffs), f.const, strict))
                    else:
                        new_rows.append((coeffs, const, strict))
                rows = new_rows
                changed = True
                break
        eqs = {v: e for v, e in eqs.items() if v in keep}
        rows = _prune(rows) or []
        while True:
            v = _pick_var(rows, candidates={u for r in rows for u in r[0] if u not in keep})
            if v is None:
                break
            rows = _eliminate(rows, v)
            assert rows is not None, "projection of a satisfiable store is satisfiable"
        out = [LinConstraint(Lin.of(v) - e, "=").normalized() for v, e in eqs.items()]
        out += [LinConstraint(Lin(c, k), "<" if s else "<=").normalized() for c, k, s in rows]
        return _simplify(out) if simplify else out

    def sample(self) -> dict[Var, Fraction]:
        """A rational point satisfying every constraint (all store variables assigned)."""
        rows = _prune(self.rows) or []
        history = []
        while rows:
            v = _pick_var(rows)
            if v is None:
                break
            history.append((v, rows))
            rows = _eliminate(rows, v)
        assign: dict[Var, Fraction] = {}
        for v, sys_rows in reversed(history):
            lo = hi = None
            lo_s = hi_s = False
            for coeffs, const, strict in sys_rows:
                q = coeffs.get(v, 0)
                if q == 0:
                    continue
                others = const + sum((c * assign.get(u, Fraction(0)) for u, c in coeffs.items() if u is not v),
                                     Fraction(0))
                bound = -others / q
                if q > 0:
                    if hi is None or bound < hi or (bound == hi and strict):
                        hi, hi_s = bound, strict
                else:
                    if lo is None or bound > lo or (bound == lo and strict):
                        lo, lo_s = bound, strict
            assign[v] = _pick(lo, lo_s, hi, hi_s)
        for coeffs, _, _ in self.rows:
            for u in coeffs:
                assign.setdefault(u, Fraction(0))
        free_in_eqs = {u for e in self.eqs.values() for u in e.coeffs}
        for u in free_in_eqs:
            assign.setdefault(u, Fraction(0))
        for v, e in self.eqs.items():
            assign[v] = e.evaluate(assign)
        return assign

    def key(self) -> tuple:
        """Hashable fingerprint (order independent)."""
        if self._key is None:
            self._key = tuple(sorted(repr((c.op, c.expr._items(), c.expr.const)) for c in self.constraints()))
        return self._key

    def to_dsl(self, names: Mapping[Var, str] | None = None) -> list[str]:
        return [c.to_dsl(names) for c in self.constraints()]

    def __repr__(self) -> str:
        return "{" + ", ".join(self.to_dsl()) + "}"


def _pick(lo, lo_s, hi, hi_s) -> Fraction:
    if lo is not None and hi is not None:
        if lo == hi:
            return lo
        if not lo_s:
            return lo
        if not hi_s:
            return hi
        return (lo + hi) / 2
    if lo is not None:
        return lo + 1 if lo_s else lo
    if hi is not None:
        return hi - 1 if hi_s else hi
    return Fraction(0)


def _simplify(cs: list[LinConstraint]) -> list[LinConstraint]:
    """Merge opposite bounds into equalities and drop redundant constraints."""
    eqs = [c for c in cs if c.op == "="]
    ineqs = [c for c in cs if c.op != "="]
    by_key: dict = {}
    for c in ineqs:
        by_key[_row_key(c.expr.coeffs)] = c
    merged = []
    used = set()
    for i, c in enumerate(ineqs):
        if i in used or c.op != "<=":
            continue
        opp = LinConstraint(-c.expr, "<=").normalized()
        for j, d in enumerate(ineqs):
            if j != i and j not in used and d == opp:
                used.update((i, j))
                merged.append(LinConstraint(c.expr, "=").normalized())
                break
    ineqs = [c for i, c in enumerate(ineqs) if i not in used]
    eqs += merged
    kept = list(ineqs)
    for c in list(ineqs):
        others = [d for d in kept if d is not c] + eqs
        base = ConstraintStore().add_all(others)
        if base is not None and base.entails(c):
            kept.remove(c)
    out = eqs + kept
    return sorted(out, key=_display_order)


def _display_order(c: LinConstraint):
    vs = sorted(v.id for v in c.expr.coeffs)
    single = len(vs) == 1
    lower = single and c.expr.coeffs[next(iter(c.expr.coeffs))] < 0
    return (vs, 0 if c.op == "=" else (1 if lower else 2))


# -- module-level operations ------------------------------------------------


def assert_constraint(store: ConstraintStore, c: LinConstraint) -> ConstraintStore:
    """Like :meth:`ConstraintStore.add` but raises :class:`Unsatisfiable`."""
    out = store.add(c)
    if out is None:
        raise Unsatisfiable(c)
    return out


def is_satisfiable(constraints: Sequence[LinConstraint] | ConstraintStore) -> bool:
    if isinstance(constraints, ConstraintStore):
        return True
    store: ConstraintStore | None = ConstraintStore()
    for c in constraints:
        if c.op == "!=":
            # a conjunction with disequalities is satisfiable iff some case split is
            rest = [d for d in constraints if d is not c]
            return any(is_satisfiable(rest + [d]) for d in c.negation()[0].negation())
    for c in constraints:
        store = store.add(c)
        if store is None:
            return False
    return True


def entails(store: ConstraintStore, c: LinConstraint) -> bool:
    return store.entails(c)


def project(store: ConstraintStore, keep: Iterable[Var]) -> list[LinConstraint]:
    return store.project(keep)


def complement(conj: Sequence[LinConstraint], context: ConstraintStore | None = None) -> list[list[LinConstraint]]:
    """Pairwise disjoint disjunction covering exactly the complement of ``conj``.

    Case ``k`` is ``c1 and ... and c(k-1) and not ck``.  Prefix constraints that
    the context already implies inside a case are dropped, and cases that are
    infeasible in the context are omitted.
    """
    ctx = context if context is not None else ConstraintStore()
    out: list[list[LinConstraint]] = []
    prefix: list[LinConstraint] = []
    for c in conj:
        for d in c.negation():
            full = _add_convex(ctx, [d] + prefix)
            if full is None:
                continue
            kept = list(prefix)
            for p in reversed(prefix):
                if p.op == "!=":
                    continue
                rest = [q for q in kept if q is not p]
                store = _add_convex(ctx, [d] + rest)
                if store is not None and store.entails(p):
                    kept = rest
            out.append(kept + [d])
        prefix.append(c)
    return out


def _add_convex(store: ConstraintStore, cs: Iterable[LinConstraint]) -> ConstraintStore | None:
    """Add the convex part of ``cs``; disequalities only get a feasibility check."""
    diseq = [c for c in cs if c.op == "!="]
    out = store.add_all(c for c in cs if c.op != "!=")
    if out is None:
        return None
    for c in diseq:
        if not out.consistent_with(c):
            return None
    return out


def solve_crossing(expr, var: Var, target, lower, upper=None, *, lower_strict: bool = True,
                   upper_strict: bool = False) -> Fraction | None:
    """The unique ``var`` value in the window where ``expr == target``.

    ``expr`` must be linear in ``var`` only.  The window is ``var > lower``
    (``>=`` when ``lower_strict`` is false) and ``var <= upper`` if given.
    Returns ``None`` when the solution lies outside the window or the
    expression is constant and never equals ``target``.
    """
    e = Lin.of(expr)
    extra = set(e.coeffs) - {var}
    if extra:
        raise NonLinear(f"crossing expression depends on {sorted(map(repr, extra))}")
    slope = e.coef(var)
    if slope == 0:
        if e.const == Fraction(target):
            raise DegenerateSlope("expression equals the target everywhere")
        return None
    t = (Fraction(target) - e.const) / slope
    if lower is not None and (t < lower or (lower_strict and t == lower)):
        return None
    if upper is not None and (t > upper or (upper_strict and t == upper)):
        return None
    return t


def dsl_list(cs: Iterable[LinConstraint], names: Mapping[Var, str] | None = None) -> list[str]:
    return [c.to_dsl(names) for c in cs]
