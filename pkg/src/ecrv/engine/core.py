"""Goal-directed evaluation of the Event Calculus over a timeline.

Two layers cooperate:

* segment outcomes: the truth of a boolean fluent, or the value of a
  functional fluent as a linear function of the segment-local time ``TAU``,
  on one segment of the timeline.  They are computed by scanning backwards
  over boundaries for the latest deciding event, and are memoised per
  ``(fluent, segment)``;
* goal solving: SLD-style resolution over body literals with a linear
  constraint store, so time variables can come back constrained instead of
  bound.  ``not`` is evaluated constructively: the inner goal's solutions are
  projected on the enclosing variables and their complement is asserted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

from ..clpq import ConstraintStore, LinConstraint, NonLinear, complement
from ..model import (Constraint, EffectRule, Happens, Holds, InitiallyLit, Not, Unify, UserLit,
                     literal_term)
from ..syntax import format_term
from ..terms import Lin, Struct, Var, is_ground, is_number, ordered_vars, rename, term_vars
from .errors import CyclicValue, DepthExceeded, Floundering, ModelConflict, MultiValue
from .proof import ProofNode
from .timeline import Timeline, TimedEvent
from .timectx import is_concrete

log = logging.getLogger(__name__)

TAU = Var("_tau")
_MISSING = object()
ARITH = {"+", "-", "*", "/"}


class ArithmeticError_(TypeError):
    pass


@dataclass
class Stats:
    expansions: int = 0
    hits: int = 0
    misses: int = 0
    stored_failures: int = 0
    visited: set = field(default_factory=set)

    def as_dict(self) -> dict:
        return {"expansions": self.expansions, "hits": self.hits, "misses": self.misses,
                "stored_failures": self.stored_failures, "segments_visited": len(self.visited)}


@dataclass
class Truth:
    value: bool
    since: int  # boundary index of the deciding event; -1 for the initial state
    proof: ProofNode | None = None


@dataclass
class Value:
    expr: object  # Fraction, or Lin in TAU (and abduced time variables)
    how: str  # trajectory | initiated | snapshot | initially
    since: int
    proof: ProofNode | None = None

    def at(self, t):
        return norm(Lin.of(self.expr).subst({TAU: Lin.of(t)}))


def _same_source(a: Value, b: Value) -> bool:
    # equal expressions from different laws (say, two trajectories that meet) need separate proofs
    if Lin.of(a.expr) != Lin.of(b.expr) or a.how != b.how or a.since != b.since:
        return False
    ra = a.proof.rule if a.proof is not None else None
    rb = b.proof.rule if b.proof is not None else None
    return ra == rb


# -- term helpers ------------------------------------------------------------


def walk(t, s):
    while isinstance(t, Var) and t in s:
        t = s[t]
    return t


def norm(x):
    if isinstance(x, Lin):
        return x.const if not x.coeffs else x
    if isinstance(x, int) and not isinstance(x, bool):
        return Fraction(x)
    return x


def is_numeric(t) -> bool:
    return is_number(t) or isinstance(t, Lin) or (
        isinstance(t, Struct) and t.functor in ARITH and t.arity in (1, 2) and (t.functor == "-" or t.arity == 2))


def eval_lin(t, s) -> Lin:
    t = walk(t, s)
    if is_number(t) or isinstance(t, Var):
        return Lin.of(t)
    if isinstance(t, Lin):
        if not any(v in s for v in t.coeffs):
            return t
        out = Lin(None, t.const)
        for v, c in t.coeffs.items():
            out = out + eval_lin(v, s).scale(c)
        return out
    if isinstance(t, Struct):
        f, a = t.functor, t.args
        if f == "+" and len(a) == 2:
            return eval_lin(a[0], s) + eval_lin(a[1], s)
        if f == "-" and len(a) == 2:
            return eval_lin(a[0], s) - eval_lin(a[1], s)
        if f == "-" and len(a) == 1:
            return -eval_lin(a[0], s)
        if f == "*" and len(a) == 2:
            x, y = eval_lin(a[0], s), eval_lin(a[1], s)
            if x.is_const():
                return y.scale(x.const)
            if y.is_const():
                return x.scale(y.const)
            raise NonLinear(f"non-linear product {format_term(resolve(t, s))}")
        if f == "/" and len(a) == 2:
            x, y = eval_lin(a[0], s), eval_lin(a[1], s)
            if not y.is_const():
                raise NonLinear(f"division by non-constant {format_term(resolve(a[1], s))}")
            if y.const == 0:
                raise ZeroDivisionError("division by zero in arithmetic term")
            return x.scale(1 / y.const)
    raise ArithmeticError_(f"not an arithmetic expression: {format_term(resolve(t, s))}")


def resolve(t, s):
    """Apply the substitution everywhere in ``t``."""
    t = walk(t, s)
    if isinstance(t, Struct):
        if not t.args:
            return t
        if is_numeric(t):
            try:
                return norm(eval_lin(t, s))
            except (NonLinear, ArithmeticError_, ZeroDivisionError):
                pass
        return Struct(t.functor, tuple(resolve(a, s) for a in t.args))
    if isinstance(t, Lin):
        return norm(eval_lin(t, s))
    return t


def bind(s: dict, v: Var, t) -> dict:
    d = dict(s)
    d[v] = t
    return d


def unify(a, b, s: dict, st: ConstraintStore):
    """Unify two terms; numeric variables known to the store get equations instead of bindings."""
    a, b = walk(a, s), walk(b, s)
    if a is b:
        return s, st
    if not isinstance(a, Var) and isinstance(b, Var):
        a, b = b, a
    if isinstance(a, Var):
        if isinstance(b, Var):
            am, bm = st.mentions(a), st.mentions(b)
            if am and bm:
                st2 = st.add(LinConstraint.make(a, "=", b))
                return None if st2 is None else (s, st2)
            if am:
                return bind(s, b, a), st
            return bind(s, a, b), st
        if is_numeric(b):
            val = eval_lin(b, s)
            if st.mentions(a):
                st2 = st.add(LinConstraint.make(a, "=", val))
                return None if st2 is None else (s, st2)
            if a in val.coeffs:
                st2 = st.add(LinConstraint.make(a, "=", val))
                return None if st2 is None else (s, st2)
            return bind(s, a, norm(val)), st
        if st.mentions(a):
            return None
        return bind(s, a, b), st
    if is_numeric(a) and is_numeric(b):
        d = eval_lin(a, s) - eval_lin(b, s)
        if not d.coeffs:
            return (s, st) if d.const == 0 else None
        st2 = st.add(LinConstraint(d, "=").normalized())
        return None if st2 is None else (s, st2)
    if isinstance(a, Struct) and isinstance(b, Struct):
        if a.functor != b.functor or len(a.args) != len(b.args):
            return None
        for x, y in zip(a.args, b.args):
            r = unify(x, y, s, st)
            if r is None:
                return None
            s, st = r
        return s, st
    return None


def rename_lit(lit, m):
    if isinstance(lit, Holds):
        return Holds(rename(lit.fluent, m), rename(lit.time, m))
    if isinstance(lit, Happens):
        return Happens(rename(lit.event, m), rename(lit.time, m))
    if isinstance(lit, InitiallyLit):
        return InitiallyLit(rename(lit.fluent, m))
    if isinstance(lit, Constraint):
        return Constraint(lit.op, rename(lit.lhs, m), rename(lit.rhs, m))
    if isinstance(lit, Unify):
        return Unify(rename(lit.lhs, m), rename(lit.rhs, m), lit.negated)
    if isinstance(lit, UserLit):
        return UserLit(rename(lit.atom, m))
    if isinstance(lit, Not):
        return Not(rename_lit(lit.inner, m))
    raise TypeError(lit)


def rename_body(body, m):
    return tuple(rename_lit(l, m) for l in body)


def time_text(t) -> str:
    if isinstance(t, Lin):
        from ..terms import format_lin
        return format_lin(t)
    return format_term(t)


# -- the engine ---------------------------------------------------------------


class Engine:
    """Evaluator bound to one timeline.

    ``tabling`` memoises segment outcomes and ground user-predicate goals
    (successes and failures); ``checkpoints`` consults outcomes stored on the
    timeline by :func:`ecrv.engine.checkpoint`.
    """

    def __init__(self, timeline: Timeline, *, tabling: bool = True, checkpoints: bool = True,
                 depth_bound: int = 10000, stats: Stats | None = None):
        self.tl = timeline
        self.model = timeline.model
        self.ctx = timeline.ctx
        self.tabling = tabling
        self.use_cp = checkpoints and timeline.checkpoints is not None
        self.depth_bound = depth_bound
        self.stats = stats if stats is not None else Stats()
        self.seg_cache: list[dict] = []
        self.goal_table: dict = {}
        self._instances: dict = {}
        self._active: set = set()

    # -- caches -------------------------------------------------------------

    def invalidate_from(self, j: int) -> None:
        del self.seg_cache[j + 1:]
        self.goal_table.clear()
        self._instances.clear()

    def _cget(self, key, k):
        if self.use_cp:
            cp = self.tl.checkpoints
            if k + 1 < len(cp):
                r = cp[k + 1].get(key, _MISSING)
                if r is not _MISSING:
                    return r
        if not self.tabling:
            return _MISSING
        if k + 1 < len(self.seg_cache):
            return self.seg_cache[k + 1].get(key, _MISSING)
        return _MISSING

    def _cput(self, key, k, val):
        if not self.tabling:
            return
        while len(self.seg_cache) <= k + 1:
            self.seg_cache.append({})
        self.seg_cache[k + 1][key] = val
        if val is None or (isinstance(val, Truth) and not val.value):
            self.stats.stored_failures += 1

    def _lookup(self, key, k):
        r = self._cget(key, k)
        if r is not _MISSING:
            if self.tabling or self.use_cp:
                self.stats.hits += 1
        elif self.tabling:
            self.stats.misses += 1
        return r

    # -- boolean fluents ------------------------------------------------------

    def truth(self, F: Struct, k: int) -> Truth:
        """Truth of ground boolean fluent ``F`` on segment ``k``."""
        key = ("T", F)
        self.stats.visited.add(k)
        r = self._lookup(key, k)
        if r is not _MISSING:
            return r
        scanned = []
        j = k
        while True:
            self.stats.expansions += 1
            if j < 0:
                out = self._initial_truth(F)
                break
            if j != k:
                r = self._cget(key, j)
                if r is not _MISSING:
                    out = r
                    break
            self.stats.visited.add(j)
            eff = self.effects_at(F, j)
            if eff is not None:
                out = eff
                scanned.append(j)
                break
            scanned.append(j)
            j -= 1
        for i in scanned:
            self._cput(key, i, out)
        if j < 0:
            self._cput(key, -1, out)
        return out

    def effects_at(self, F: Struct, j: int) -> Truth | None:
        """Decision made by events at boundary ``j`` about ``F``, if any."""
        key = ("E", F)
        r = self._cget(key, j)
        if r is not _MISSING:
            return r
        inits, terms = [], []
        for ev in self.tl.at[j]:
            for rule in self.model.effects_by_fluent.get(F.functor, ()):
                node = self.effect_fires(rule, ev, F)
                if node is not None:
                    (inits if rule.kind == "initiates" else terms).append(node)
        if inits and terms:
            raise ModelConflict(format_term(F), time_text(self.tl.times[j]),
                                [n.rule for n in inits], [n.rule for n in terms])
        out = Truth(True, j, inits[0]) if inits else Truth(False, j, terms[0]) if terms else None
        if self.tabling:
            while len(self.seg_cache) <= j + 1:
                self.seg_cache.append({})
            self.seg_cache[j + 1][key] = out
        return out

    def effect_fires(self, rule: EffectRule, ev: TimedEvent, F) -> ProofNode | None:
        self.stats.expansions += 1
        m: dict = {}
        r = unify(rename(rule.event, m), ev.event, {}, self.ctx.store)
        if r is None:
            return None
        r = unify(rename(rule.fluent, m), F, *r)
        if r is None:
            return None
        r = unify(rename(rule.time, m), ev.time, *r)
        if r is None:
            return None
        for s2, st2, proofs in self.solve(rename_body(rule.body, m), r[0], r[1], 1):
            self.ctx.require(st2)
            goal = Struct(rule.kind, (ev.event, resolve(F, s2), ev.time))
            return ProofNode("effect", goal, rule.rid, [self.happens_node(ev)] + [finalize(p, s2) for p in proofs])
        return None

    def _initial_truth(self, F) -> Truth:
        for _, st, p in self.solve_lit(InitiallyLit(F), {}, self.ctx.store, 1):
            self.ctx.require(st)
            return Truth(True, -1, p)
        return Truth(False, -1, None)

    def instances(self, functor: str) -> list:
        """Ground instances of a boolean fluent that can ever hold."""
        if functor in self._instances:
            return self._instances[functor]
        info = self.model.fluents.get(functor)
        if info is None:
            return []
        if info.arity == 0:
            out = [Struct(functor, ())]
        else:
            seen: dict = {}
            tmpl = Struct(functor, tuple(Var("_") for _ in range(info.arity)))
            for s, _, _ in self.solve_lit(InitiallyLit(tmpl), {}, self.ctx.store, 1):
                g = resolve(tmpl, s)
                if is_ground(g):
                    seen.setdefault(g, None)
            for group in self.tl.at:
                for ev in group:
                    for rule in self.model.effects_by_fluent.get(functor, ()):
                        m: dict = {}
                        r = unify(rename(rule.event, m), ev.event, {}, self.ctx.store)
                        if r is None:
                            continue
                        r = unify(rename(rule.time, m), ev.time, *r)
                        if r is None:
                            continue
                        fl = rename(rule.fluent, m)
                        for s2, _, _ in self.solve(rename_body(rule.body, m), r[0], r[1], 1):
                            g = resolve(fl, s2)
                            if is_ground(g):
                                seen.setdefault(g, None)
            out = list(seen)
        self._instances[functor] = out
        return out

    def state_instances(self, S) -> list:
        if is_ground(S):
            return [S]
        out = []
        for inst in self.instances(S.functor):
            if unify(S, inst, {}, ConstraintStore()) is not None:
                out.append(inst)
        return out

    # -- functional fluents ---------------------------------------------------

    def value(self, name: str, k: int) -> Value | None:
        """Value of functional fluent ``name`` on segment ``k`` (None: no value)."""
        key = ("V", name)
        self.stats.visited.add(k)
        r = self._lookup(key, k)
        if r is not _MISSING:
            return r
        self.stats.expansions += 1
        if (name, k) in self._active:
            raise CyclicValue(name, f"on segment {self.tl.seg_label(k)}")
        self._active.add((name, k))
        try:
            cands = self._trajectory_values(name, k)
            if cands:
                out = self._pick(name, cands, f"on segment {self.tl.seg_label(k)}")
            else:
                out = self._inertial(name, k)
        finally:
            self._active.discard((name, k))
        self._cput(key, k, out)
        return out

    def _pick(self, name, cands, where):
        distinct = []
        for c in cands:
            if not any(Lin.of(c.expr) == Lin.of(d.expr) for d in distinct):
                distinct.append(c)
        if len(distinct) > 1:
            raise MultiValue(name, where, [time_text(d.expr) for d in distinct])
        return distinct[0]

    def _trajectory_values(self, name: str, k: int) -> list:
        out = []
        for R in self.model.traj_by_fluent.get(name, ()):
            for S in self.state_instances(R.state):
                t = self.truth(S, k)
                if not t.value:
                    continue
                t1 = self.tl.times[t.since] if t.since >= 0 else Fraction(0)
                m: dict = {}
                r = unify(rename(R.state, m), S, {}, self.ctx.store)
                if r is None:
                    continue
                s, st = r
                s = bind(s, rename(R.t1, m), t1)
                s = bind(s, rename(R.t2, m), Lin.of(TAU))
                fl = rename(R.fluent, m)
                self.stats.expansions += 1
                for s2, st2, proofs in self.solve(rename_body(R.body, m), s, st, 1):
                    self.ctx.require(st2)
                    v = norm(eval_lin(fl.args[0], s2))
                    holds = self.holds_node(S, TAU, t, k, k)
                    node = ProofNode("trajectory", Struct("trajectory", (S, t1, Struct(name, (v,)), TAU)),
                                     R.rid, [holds] + [finalize(p, s2) for p in proofs], {"start": t1})
                    out.append(Value(v, "trajectory", t.since, node))
                    break
        return out

    def _inertial(self, name: str, k: int) -> Value | None:
        key = ("I", name)
        r = self._cget(key, k)
        if r is not _MISSING:
            return r
        scanned = []
        j = k
        while True:
            self.stats.expansions += 1
            if j < 0:
                out = self._initial_value(name)
                break
            if j != k:
                r = self._cget(key, j)
                if r is not _MISSING:
                    out = r
                    break
            self.stats.visited.add(j)
            r = self._setters(name, j)
            scanned.append(j)
            if r is not _MISSING:
                out = r
                break
            j -= 1
        for i in scanned:
            self._cput(key, i, out)
        return out

    def _setters(self, name: str, j: int):
        vals, cleared = [], False
        t_j = self.tl.times[j]
        for ev in self.tl.at[j]:
            for rule in self.model.effects_by_fluent.get(name, ()):
                V = Var("_V")
                node = self.effect_fires(rule, ev, Struct(name, (V,)))
                if node is None:
                    continue
                if rule.kind == "initiates":
                    x = node.goal.args[1].args[0]
                    if not (is_number(x) or isinstance(x, Lin)):
                        continue
                    vals.append(Value(norm(x), "initiated", j, node))
                else:
                    cleared = True
        for R in self.model.traj_by_fluent.get(name, ()):
            for S in self.state_instances(R.state):
                eff = self.effects_at(S, j)
                if eff is None or eff.value:
                    continue
                if not self.truth(S, j - 1).value:
                    continue
                prev = self.value(name, j - 1)
                if prev is None:
                    continue
                x = prev.at(t_j)
                node = ProofNode("snapshot", Struct(name, (x,)), "snapshot",
                                 [eff.proof, self.value_node(name, prev, t_j, j - 1, j - 1)],
                                 {"at": t_j, "state": S})
                vals.append(Value(x, "snapshot", j, node))
        if vals:
            return self._pick(name, vals, f"at {time_text(t_j)}")
        if cleared:
            return None
        return _MISSING

    def _initial_value(self, name: str) -> Value | None:
        V = Var("_V")
        cands = []
        for s, st, p in self.solve_lit(InitiallyLit(Struct(name, (V,))), {}, self.ctx.store, 1):
            x = walk(V, s)
            if is_numeric(x):
                cands.append(Value(norm(eval_lin(x, s)), "initially", -1, p))
        if not cands:
            return None
        return self._pick(name, cands, "initially")

    # -- proof helpers ----------------------------------------------------------

    def happens_node(self, ev: TimedEvent, deep: bool = False) -> ProofNode:
        """Occurrence leaf.  A triggered event carries its derivation only when
        ``deep``; nested references stay leaves so proofs grow linearly."""
        goal = Struct("happens", (ev.event, ev.time))
        if ev.source == "triggered":
            kids = [ev.proof] if deep and ev.proof else []
            return ProofNode("triggered", goal, ev.rule, kids)
        return ProofNode("happens", goal, ev.source)

    def holds_node(self, F, tv, t: Truth, k1: int, k2: int) -> ProofNode:
        since = self.tl.times[t.since] if t.since >= 0 else Fraction(0)
        clip = ProofNode("not_clipped", Struct("clipped", (since, F, tv)), "stopped_in",
                         info={"from": since, "from_closed": t.since < 0, "fluent": F})
        axiom = "initiated" if t.since >= 0 else "initially"
        kids = [t.proof, clip] if t.proof is not None else [clip]
        return ProofNode("holds", Struct("holdsAt", (F, tv)), axiom, kids,
                         {"segments": self._seg_span(k1, k2), "since": since})

    def value_node(self, name, val: Value, tv, k1: int, k2: int) -> ProofNode:
        x = val.at(tv)
        kids = [finalize(val.proof, {TAU: tv})] if val.proof is not None else []
        info = {"segments": self._seg_span(k1, k2)}
        if val.how != "trajectory":
            since = self.tl.times[val.since] if val.since >= 0 else Fraction(0)
            info["since"] = since
            kids.append(ProofNode("unchanged", Struct("changed", (since, Struct(name, (x,)), tv)), "inertia",
                                  info={"from": since, "fluent": name, "from_closed": val.since < 0}))
        return ProofNode("value", Struct("holdsAt", (Struct(name, (x,)), tv)), val.how, kids, info)

    def _seg_span(self, k1, k2) -> str:
        if k1 == k2:
            return self.tl.seg_label(k1)
        return f"{self.tl.seg_label(k1)}..{self.tl.seg_label(k2)}"

    # -- goal solving -----------------------------------------------------------

    def solve(self, goals, s: dict, st: ConstraintStore, depth: int) -> Iterator:
        if depth > self.depth_bound:
            raise DepthExceeded(self.depth_bound)
        if not goals:
            yield s, st, []
            return
        first, rest = goals[0], goals[1:]
        for s1, st1, p1 in self.solve_lit(first, s, st, depth):
            if not rest:
                yield s1, st1, [p1]
                continue
            for s2, st2, p2 in self.solve(rest, s1, st1, depth):
                yield s2, st2, [p1] + p2

    def solve_lit(self, lit, s, st, depth) -> Iterator:
        self.stats.expansions += 1
        if isinstance(lit, Holds):
            return self._holds(lit, s, st, depth)
        if isinstance(lit, Happens):
            return self._happens(lit, s, st)
        if isinstance(lit, Constraint):
            return self._constraint(lit, s, st)
        if isinstance(lit, UserLit):
            return self._user(lit, s, st, depth)
        if isinstance(lit, InitiallyLit):
            return self._initially(lit, s, st, depth)
        if isinstance(lit, Unify):
            return self._unify(lit, s, st)
        if isinstance(lit, Not):
            return self._not(lit, s, st, depth)
        raise TypeError(f"unknown literal {lit!r}")

    def _constraint(self, lit: Constraint, s, st):
        l, r = eval_lin(lit.lhs, s), eval_lin(lit.rhs, s)
        if lit.op == "=":
            for side, other in ((lit.lhs, r), (lit.rhs, l)):
                v = walk(side, s)
                if isinstance(v, Var) and not st.mentions(v) and v not in other.coeffs:
                    val = norm(other)
                    yield bind(s, v, val), st, ProofNode("constraint", LinConstraint.make(v, "=", other), "clpq",
                                                         info={"bind": v})
                    return
        if lit.op == "!=":
            for op in ("<", ">"):
                c = LinConstraint.make(l, op, r)
                st2 = st.add(c)
                if st2 is not None:
                    yield s, st2, ProofNode("constraint", c, "clpq")
            return
        c = LinConstraint.make(l, lit.op, r)
        st2 = st.add(c)
        if st2 is not None:
            yield s, st2, ProofNode("constraint", c, "clpq")

    def _unify(self, lit: Unify, s, st):
        r = unify(lit.lhs, lit.rhs, s, st)
        goal = Struct("\\=" if lit.negated else "=", (resolve(lit.lhs, s), resolve(lit.rhs, s)))
        if not lit.negated:
            if r is not None:
                yield r[0], r[1], ProofNode("unify", goal, "unify")
            return
        if r is None:
            yield s, st, ProofNode("unify", goal, "not_unifiable")
            return
        if r[0] == s and r[1] is st:
            return
        if is_ground(resolve(lit.lhs, s)) and is_ground(resolve(lit.rhs, s)):
            return
        raise Floundering(f"\\= on non-ground terms {format_term(goal)}")

    def _initially(self, lit: InitiallyLit, s, st, depth):
        F = walk(lit.fluent, s)
        if isinstance(F, Struct):
            rules = self.model.initially_by_fluent.get(F.functor, ())
        else:
            rules = self.model.initially
        for rule in rules:
            m: dict = {}
            r = unify(F, rename(rule.fluent, m), s, st)
            if r is None:
                continue
            for s2, st2, ps in self.solve(rename_body(rule.body, m), r[0], r[1], depth + 1):
                yield s2, st2, ProofNode("initially", Struct("initiallyP", (resolve(F, s2),)), rule.rid, ps)

    def _user(self, lit: UserLit, s, st, depth):
        g = resolve(lit.atom, s)
        ground = is_ground(g)
        key = ("U", g)
        if ground and self.tabling:
            if key in self.goal_table:
                self.stats.hits += 1
                node = self.goal_table[key]
                if node is not None:
                    yield s, st, node
                return
            self.stats.misses += 1
        for clause in self.model.user_by_key.get(g.key, ()):
            m: dict = {}
            r = unify(g, rename(clause.head, m), s, st)
            if r is None:
                continue
            for s2, st2, ps in self.solve(rename_body(clause.body, m), r[0], r[1], depth + 1):
                node = ProofNode("fact" if not clause.body else "rule", resolve(g, s2), clause.rid, ps)
                if ground:
                    if self.tabling:
                        self.goal_table[key] = node
                    yield s, st, node
                    return
                yield s2, st2, node
        if ground and self.tabling:
            self.goal_table[key] = None
            self.stats.stored_failures += 1

    # -- negation -------------------------------------------------------------

    def _not(self, lit: Not, s, st, depth):
        inner = lit.inner
        term = resolve(literal_term(inner), s)
        outer = [v for v in ordered_vars(term)]
        st0 = st
        if isinstance(inner, (Holds, Happens)):
            tv = walk(inner.time, s)
            if isinstance(tv, Var) and not st.mentions(tv):
                st0 = st.add_all([LinConstraint.make(0, "<=", tv), LinConstraint.make(tv, "<=", self.tl.horizon)])
        sols = list(self.solve_lit(inner, s, st0, depth + 1))
        node = ProofNode("not", Struct("not", (term,)), "constructive_negation")
        if not sols:
            yield s, st0, node
            return
        conjs = []
        for s_i, st_i, _ in sols:
            extra = []
            for v in outer:
                val = walk(v, s_i)
                if val is v:
                    continue
                if isinstance(val, Struct) and not is_numeric(val):
                    raise Floundering(f"negated goal {format_term(term)} binds {v!r} to {format_term(val)}")
                extra.append(LinConstraint.make(v, "=", eval_lin(val, s_i)))
            store_i = st_i.add_all(extra) if extra else st_i
            if store_i is None:
                continue
            proj = store_i.project([v for v in outer if isinstance(v, Var)])
            if all(st0.entails(c) for c in proj):
                return
            conjs.append(proj)

        def product(i, store):
            if i == len(conjs):
                yield store
                return
            for case in complement(conjs[i], context=store):
                nxt = store.add_all(case)
                if nxt is not None:
                    yield from product(i + 1, nxt)

        for st2 in product(0, st0):
            yield s, st2, node

    # -- holdsAt / happens --------------------------------------------------------

    def time_value(self, t, s):
        t = walk(t, s)
        if isinstance(t, Var):
            return t
        if is_number(t):
            return Fraction(t)
        return norm(eval_lin(t, s))

    def instant_seg(self, tv, boolean: bool = False):
        """Segment for a time that is a known instant, ``None`` if it must be enumerated,
        or ``"out"`` when it lies outside ``[0, horizon]``.

        The closed-clip mutant only shifts boolean truth at event instants.
        """
        closed = boolean and self.tl.clip == "closed"
        if isinstance(tv, Var):
            return None
        if is_concrete(tv) and self.tl.concrete:
            if tv < 0 or tv > self.tl.horizon:
                return "out"
            return self.tl.seg_of_instant(tv, closed)
        for i, b in enumerate(self.tl.times):
            if Lin.of(b) == Lin.of(tv):
                return i if closed else i - 1
        return None

    def candidate_segs(self, tv, st):
        tl = self.tl
        if tl.concrete:
            vs = [tv] if isinstance(tv, Var) else list(Lin.of(tv).coeffs)
            if any(st.mentions(v) for v in vs):
                lo, _, hi, _ = st.bounds(tv)
                return [k for k in tl.seg_range(lo, hi) if tl.seg_nonempty(k)]
            return [k for k in range(-1, tl.n) if tl.seg_nonempty(k)]
        return [k for k in range(-1, tl.n) if tl.seg_nonempty(k)]

    def _holds(self, lit: Holds, s, st, depth):
        F = walk(lit.fluent, s)
        if isinstance(F, Var):
            for name, info in self.model.fluents.items():
                tmpl = Struct(name, tuple(Var("_") for _ in range(info.arity)))
                r = unify(F, tmpl, s, st)
                if r is not None:
                    yield from self._holds(Holds(tmpl, lit.time), r[0], r[1], depth)
            return
        if not isinstance(F, Struct):
            return
        info = self.model.fluents.get(F.functor)
        if info is None or info.arity != F.arity:
            return
        tv = self.time_value(lit.time, s)
        if info.functional:
            yield from self._holds_value(F, tv, s, st)
            return
        Fr = resolve(F, s)
        cands = [Fr] if is_ground(Fr) else self.instances(F.functor)
        for inst in cands:
            r = unify(Fr, inst, s, st)
            if r is None:
                continue
            yield from self._holds_bool(inst, tv, r[0], r[1])

    def _holds_bool(self, F, tv, s, st):
        k = self.instant_seg(tv, boolean=True)
        if k == "out":
            return
        if k is not None:
            t = self.truth(F, k)
            if t.value:
                yield s, st, self.holds_node(F, tv, t, k, k)
            return
        run = None

        def flush(run):
            k1, k2, t = run
            st2 = st.add_all(self.tl.run_constraints(k1, k2, tv))
            if st2 is not None:
                return s, st2, self.holds_node(F, tv, t, k1, k2)
            return None

        for k in self.candidate_segs(tv, st):
            cs = self.tl.seg_constraints(k, tv)
            ok = cs is not None and st.add_all(cs) is not None
            t = self.truth(F, k) if ok else None
            if t is not None and t.value:
                if run is not None and run[1] == k - 1:
                    run = (run[0], k, run[2])
                    continue
                if run is not None:
                    out = flush(run)
                    if out:
                        yield out
                run = (k, k, t)
            elif run is not None:
                out = flush(run)
                if out:
                    yield out
                run = None
        if run is not None:
            out = flush(run)
            if out:
                yield out

    def _holds_value(self, F, tv, s, st):
        name = F.functor
        V = F.args[0]
        k = self.instant_seg(tv)
        if k == "out":
            return
        if k is not None:
            val = self.value(name, k)
            if val is None:
                return
            r = unify(V, val.at(tv), s, st)
            if r is not None:
                yield r[0], r[1], self.value_node(name, val, tv, k, k)
            return
        runs: list = []
        for k in self.candidate_segs(tv, st):
            cs = self.tl.seg_constraints(k, tv)
            if cs is None or st.add_all(cs) is None:
                continue
            val = self.value(name, k)
            if val is None:
                continue
            if runs and runs[-1][1] == k - 1 and _same_source(runs[-1][2], val):
                runs[-1] = (runs[-1][0], k, runs[-1][2])
            else:
                runs.append((k, k, val))
        for k1, k2, val in runs:
            st2 = st.add_all(self.tl.run_constraints(k1, k2, tv))
            if st2 is None:
                continue
            r = unify(V, val.at(tv), s, st2)
            if r is not None:
                yield r[0], r[1], self.value_node(name, val, tv, k1, k2)

    def _happens(self, lit: Happens, s, st):
        tv = self.time_value(lit.time, s)
        tl = self.tl
        if is_concrete(tv) and tl.concrete:
            i = tl.boundary_index(tv)
            idx = [] if i is None else [i]
        elif tl.concrete and any(st.mentions(v) for v in ([tv] if isinstance(tv, Var) else Lin.of(tv).coeffs)):
            lo, _, hi, _ = st.bounds(tv)
            import bisect
            a = 0 if lo is None else bisect.bisect_left(tl.times, lo)
            b = tl.n if hi is None else bisect.bisect_right(tl.times, hi)
            idx = range(a, b)
        else:
            idx = range(tl.n)
        for i in idx:
            for ev in tl.at[i]:
                self.stats.expansions += 1
                r = unify(lit.event, ev.event, s, st)
                if r is None:
                    continue
                r = unify(lit.time, ev.time, *r)
                if r is None:
                    continue
                yield r[0], r[1], self.happens_node(ev, deep=True)


def _free_vars(node: ProofNode) -> frozenset:
    # computed once per node; nodes are not mutated after they are finalised or tabled
    fv = getattr(node, "_free", None)
    if fv is None:
        acc: set = set()
        g = node.goal
        term_vars(g.expr if isinstance(g, LinConstraint) else g, acc)
        for v in node.info.values():
            term_vars(v.expr if isinstance(v, LinConstraint) else v, acc)
        for c in node.children:
            acc |= _free_vars(c)
        fv = node._free = frozenset(acc)
    return fv


def finalize(node: ProofNode, s: dict) -> ProofNode:
    """Copy of a proof with the final substitution applied to every goal."""

    if getattr(node, "ground", False) or (s and _free_vars(node).isdisjoint(s)):
        return node

    def fin(x):
        if isinstance(x, LinConstraint):
            return LinConstraint(eval_lin(x.expr, s), x.op).normalized()
        if isinstance(x, (Struct, Var, Lin)):
            return resolve(x, s)
        return x

    out = ProofNode(node.kind, fin(node.goal), node.rule, [finalize(c, s) for c in node.children],
                    {k: fin(v) for k, v in node.info.items()})
    g = out.goal
    out.ground = ((g.is_const() if isinstance(g, LinConstraint) else is_ground(g))
                  and all(c.ground for c in out.children) and all(is_ground(v) for v in out.info.values()))
    return out
