"""Brute-force forward simulator used to cross-check the engine.

The simulator walks the narrative in time order, applies effects boundary by
boundary and finds trigger onsets by evaluating each trigger body on every
piece of the timeline: the instants at event times and the open stretches
between them.  Crossing times are therefore exact and get inserted into the
sample grid.

It shares terms, the parser and the linear-constraint store with the engine,
but none of the engine's evaluation code.
"""

from __future__ import annotations

import bisect
import csv
import logging
from dataclasses import dataclass, field
from fractions import Fraction

from .clpq import ConstraintStore, LinConstraint, complement
from .engine.errors import ModelConflict, MultiValue, NoValue, ZenoError
from .model import Constraint, DomainModel, Happens, Holds, InitiallyLit, Narrative, Not, Unify, UserLit
from .syntax import format_term
from .terms import Lin, Struct, Var, format_number, is_number

log = logging.getLogger(__name__)

_T = Var("_t")  # symbolic trigger time inside one open piece
_ARITH = {"+", "-", "*", "/"}
_MAX_DEPTH = 200


class OracleError(ValueError):
    """The simulator cannot evaluate the model (unsupported construct or bad input)."""


class _Unbound(Exception):
    pass


# -- terms -------------------------------------------------------------------------


def _walk(t, env):
    while isinstance(t, Var) and t in env:
        t = env[t]
    return t


def _subst(t, env):
    t = _walk(t, env)
    if isinstance(t, Struct):
        return Struct(t.functor, tuple(_subst(a, env) for a in t.args))
    if isinstance(t, Lin):
        return _num(t, env)
    return t


def _fresh(t, m):
    if isinstance(t, Var):
        if t not in m:
            m[t] = Var(t.name)
        return m[t]
    if isinstance(t, Struct):
        return Struct(t.functor, tuple(_fresh(a, m) for a in t.args))
    return t


def _fresh_lit(lit, m):
    if isinstance(lit, Holds):
        return Holds(_fresh(lit.fluent, m), _fresh(lit.time, m))
    if isinstance(lit, Happens):
        return Happens(_fresh(lit.event, m), _fresh(lit.time, m))
    if isinstance(lit, InitiallyLit):
        return InitiallyLit(_fresh(lit.fluent, m))
    if isinstance(lit, Constraint):
        return Constraint(lit.op, _fresh(lit.lhs, m), _fresh(lit.rhs, m))
    if isinstance(lit, Unify):
        return Unify(_fresh(lit.lhs, m), _fresh(lit.rhs, m), lit.negated)
    if isinstance(lit, UserLit):
        return UserLit(_fresh(lit.atom, m))
    return Not(_fresh_lit(lit.inner, m))


def _num(t, env):
    """Fraction, or Lin over the symbolic trigger time."""
    t = _walk(t, env)
    if is_number(t):
        return Fraction(t)
    if isinstance(t, Lin):
        out = Lin(None, t.const)
        for v, c in t.coeffs.items():
            x = _walk(v, env)
            out = out + (Lin.of(v) if x is v else Lin.of(_num(x, env))).scale(c)
        return out.const if not out.coeffs else out
    if isinstance(t, Var):
        raise _Unbound(t.name)
    if isinstance(t, Struct) and t.functor in _ARITH:
        xs = [_num(a, env) for a in t.args]
        if t.functor == "-" and len(xs) == 1:
            return -xs[0]
        a, b = xs
        if t.functor == "+":
            r = Lin.of(a) + b if isinstance(a, Lin) or isinstance(b, Lin) else a + b
        elif t.functor == "-":
            r = Lin.of(a) - b if isinstance(a, Lin) or isinstance(b, Lin) else a - b
        elif t.functor == "*":
            if isinstance(a, Lin) and isinstance(b, Lin):
                raise OracleError(f"non-linear product in {format_term(t)}")
            r = a.scale(b) if isinstance(a, Lin) else b.scale(a) if isinstance(b, Lin) else a * b
        else:
            if isinstance(b, Lin):
                raise OracleError(f"division by a time-dependent term in {format_term(t)}")
            if b == 0:
                raise OracleError("division by zero")
            r = a.scale(1 / b) if isinstance(a, Lin) else a / b
        return r.const if isinstance(r, Lin) and not r.coeffs else r
    raise OracleError(f"not a number: {format_term(t)}")


def _is_numeric(t) -> bool:
    return is_number(t) or isinstance(t, Lin) or (isinstance(t, Struct) and t.functor in _ARITH)


def _unify(a, b, env, store):
    a, b = _walk(a, env), _walk(b, env)
    if isinstance(a, Var):
        return ({**env, a: b}, store) if a is not b else (env, store)
    if isinstance(b, Var):
        return {**env, b: a}, store
    if _is_numeric(a) and _is_numeric(b):
        x, y = _num(a, env), _num(b, env)
        if not isinstance(x, Lin) and not isinstance(y, Lin):
            return (env, store) if x == y else None
        st = store.add(LinConstraint.make(x, "=", y))
        return None if st is None else (env, st)
    if isinstance(a, Struct) and isinstance(b, Struct):
        if a.functor != b.functor or a.arity != b.arity:
            return None
        r = (env, store)
        for x, y in zip(a.args, b.args):
            r = _unify(x, y, *r)
            if r is None:
                return None
        return r
    return None


# -- simulation state ----------------------------------------------------------------


@dataclass
class _State:
    """What holds on the open stretch after one boundary."""

    true: dict = field(default_factory=dict)  # ground boolean fluent -> time it was last initiated
    values: dict = field(default_factory=dict)  # functional fluent name -> inertial value or None


class Simulator:
    def __init__(self, model: DomainModel, narrative: Narrative, horizon=None, zeno_bound: int = 1000):
        self.model = model
        self.horizon = Fraction(narrative.horizon if horizon is None else horizon)
        self.zeno_bound = zeno_bound
        self.at: dict = {Fraction(0): []}
        for o in narrative.occurrences:
            if o.time <= self.horizon:
                self.at.setdefault(Fraction(o.time), []).append(o.event)
        self.times = sorted(self.at)
        self.triggered: list = []
        self._after: dict = {}
        self._piece: _State | None = None
        self.functional = {n for n, info in model.fluents.items() if info.functional}
        self.initial = self._initial()

    # -- states -------------------------------------------------------------

    def _initial(self) -> _State:
        st = _State()
        env0 = {}
        vals: dict = {}
        for r in self.model.initially:
            m: dict = {}
            F = _fresh(r.fluent, m)
            for env, _ in self._solve([_fresh_lit(x, m) for x in r.body], env0, ConstraintStore(), 0):
                g = _subst(F, env)
                if not isinstance(g, Struct):
                    continue
                if g.functor in self.functional:
                    if g.args and is_number(g.args[0]):
                        vals.setdefault(g.functor, []).append(Fraction(g.args[0]))
                else:
                    st.true[g] = Fraction(0)
        for name, vs in vals.items():
            st.values[name] = _one(name, vs, "initially")
        return st

    def before(self, t: Fraction) -> _State:
        """State governing the instant ``t``: the one after the last boundary strictly before it."""
        i = bisect.bisect_left(self.times, t)
        return self.initial if i == 0 else self.after(self.times[i - 1])

    def after(self, b: Fraction) -> _State:
        if b not in self._after:
            self._after[b] = self._apply(self.before(b), b, self.at[b])
        return self._after[b]

    def _apply(self, prev: _State, t: Fraction, events) -> _State:
        decided: dict = {}
        sets: dict = {}
        cleared: set = set()
        for ev in events:
            for r in self.model.effects:
                m: dict = {}
                first = _unify(_fresh(r.event, m), ev, {}, ConstraintStore())
                if first is None:
                    continue
                first = _unify(_fresh(r.time, m), t, *first)
                if first is None:
                    continue
                F = _fresh(r.fluent, m)
                body = [_fresh_lit(x, m) for x in r.body]
                functional = isinstance(F, Struct) and F.functor in self.functional
                for env, _ in self._solve(body, *first, 0):
                    g = _subst(F, env)
                    if functional:
                        if r.kind == "initiates":
                            if g.args and _is_numeric(g.args[0]):
                                sets.setdefault(g.functor, []).append(_num(g.args[0], env))
                        else:
                            cleared.add(g.functor)
                        break
                    decided.setdefault(g, {"initiates": [], "terminates": []})[
                        "initiates" if r.kind == "initiates" else "terminates"].append(r.rid)
        for g, d in decided.items():
            if d["initiates"] and d["terminates"]:
                raise ModelConflict(format_term(g), format_number(t), d["initiates"], d["terminates"])
        # the value a trajectory reached is kept when its state fluent stops
        for R in self.model.trajectories:
            name = R.fluent.functor
            for S in list(prev.true):
                if _unify(_fresh(R.state, {}), S, {}, ConstraintStore()) is None:
                    continue
                if S in decided and decided[S]["terminates"]:
                    v = self.value(prev, name, t)
                    if v is not None:
                        sets.setdefault(name, []).append(v)
        new = _State(dict(prev.true), dict(prev.values))
        for g, d in decided.items():
            if d["initiates"]:
                new.true[g] = t
            else:
                new.true.pop(g, None)
        for name in set(sets) | cleared:
            new.values[name] = _one(name, sets[name], f"at {format_number(t)}") if name in sets else None
        return new

    def value(self, st: _State, name: str, t):
        """Value of ``name`` at time ``t`` (a number, or Lin over the piece variable)."""
        vals = []
        for R in self.model.trajectories:
            if R.fluent.functor != name:
                continue
            for S, since in st.true.items():
                m: dict = {}
                r = _unify(_fresh(R.state, m), S, {}, ConstraintStore())
                if r is None:
                    continue
                r = _unify(_fresh(R.t1, m), since, *r)
                r = r and _unify(_fresh(R.t2, m), t, *r)
                if r is None:
                    continue
                F = _fresh(R.fluent, m)
                for env, _ in self._solve([_fresh_lit(x, m) for x in R.body], *r, 0):
                    vals.append(_num(F.args[0], env))
                    break
        if vals:
            return _one(name, vals, f"at {_time_text(t)}")
        return st.values.get(name)

    def facts(self, st: _State, t) -> list:
        out = list(st.true)
        for name in sorted(self.functional):
            v = self.value(st, name, t)
            if v is not None:
                out.append(Struct(name, (v,)))
        return out

    # -- body evaluation --------------------------------------------------------------

    def _time(self, t, env, store):
        t = _walk(t, env)
        if isinstance(t, Var):
            raise OracleError("time argument is unbound")
        x = _num(t, env)
        if isinstance(x, Lin):
            x = store.resolve(x)
            if isinstance(x, Lin) and x.coeffs:
                if x != Lin.of(_T) or self._piece is None:
                    raise OracleError("time expressions other than the trigger time are not supported")
                return x
        return Fraction(x)

    def _solve(self, goals, env, store, depth):
        if not goals:
            yield env, store
            return
        if depth > _MAX_DEPTH:
            raise OracleError("evaluation depth exceeded")
        first, rest = goals[0], goals[1:]
        for env2, st2 in self._lit(first, env, store, depth):
            yield from self._solve(rest, env2, st2, depth)

    def _lit(self, lit, env, store, depth):
        if isinstance(lit, Holds):
            t = self._time(lit.time, env, store)
            st = self._piece if isinstance(t, Lin) else self.before(t)
            for f in self.facts(st, t):
                r = _unify(lit.fluent, f, env, store)
                if r is not None:
                    yield r
        elif isinstance(lit, Happens):
            tt = _walk(lit.time, env)
            slots = self.times if isinstance(tt, Var) else [self._time(tt, env, store)]
            for b in slots:
                if isinstance(b, Lin):
                    continue  # no events strictly inside an open piece
                for ev in self.at.get(b, ()):
                    r = _unify(lit.event, ev, env, store)
                    r = r and _unify(tt, b, *r)
                    if r is not None:
                        yield r
        elif isinstance(lit, InitiallyLit):
            for rule in self.model.initially:
                m: dict = {}
                r = _unify(lit.fluent, _fresh(rule.fluent, m), env, store)
                if r is not None:
                    yield from self._solve([_fresh_lit(x, m) for x in rule.body], *r, depth + 1)
        elif isinstance(lit, UserLit):
            for rule in self.model.user_by_key.get(lit.atom.key, ()):
                m: dict = {}
                r = _unify(lit.atom, _fresh(rule.head, m), env, store)
                if r is not None:
                    yield from self._solve([_fresh_lit(x, m) for x in rule.body], *r, depth + 1)
        elif isinstance(lit, Unify):
            r = _unify(lit.lhs, lit.rhs, env, store)
            if lit.negated:
                if r is None:
                    yield env, store
            elif r is not None:
                yield r
        elif isinstance(lit, Constraint):
            yield from self._constraint(lit, env, store)
        elif isinstance(lit, Not):
            yield from self._not(lit, env, store, depth)
        else:
            raise OracleError(f"unsupported literal {lit!r}")

    def _constraint(self, lit, env, store):
        lhs, rhs = _walk(lit.lhs, env), _walk(lit.rhs, env)
        if lit.op == "=":
            if isinstance(lhs, Var) and not isinstance(rhs, Var):
                yield {**env, lhs: _num(rhs, env)}, store
                return
            if isinstance(rhs, Var) and not isinstance(lhs, Var):
                yield {**env, rhs: _num(lhs, env)}, store
                return
        try:
            x, y = _num(lhs, env), _num(rhs, env)
        except _Unbound as e:
            raise OracleError(f"unbound variable {e} in constraint") from None
        ops = ["<", ">"] if lit.op == "!=" else [lit.op]
        for op in ops:
            c = LinConstraint.make(x, op, y)
            if c.is_const():
                if c.truth():
                    yield env, store
                continue
            st = store.add(c)
            if st is not None:
                yield env, st

    def _not(self, lit, env, store, depth):
        extra = []
        for _, st in self._solve([lit.inner], env, store, depth + 1):
            new = [c for c in st.constraints() if not store.entails(c)]
            if not new:
                return  # the negated goal holds outright
            extra.append(new)
        # the negated goal holds only for part of the piece: keep the rest
        stores = [store]
        for conj in extra:
            nxt = []
            for s in stores:
                for alt in complement(conj, s):
                    s2 = s.add_all(alt)
                    if s2 is not None:
                        nxt.append(s2)
            stores = nxt
        for s in stores:
            yield env, s

    # -- trigger closure -------------------------------------------------------------------

    def _pieces(self, cursor: int):
        """Instants and open stretches from just after boundary ``cursor - 1`` to the horizon."""
        ts = self.times
        out = []
        start = 0 if cursor == 0 else cursor - 1
        if cursor == 0:
            out.append(("at", ts[0]))
        for i in range(start, len(ts)):
            nxt = ts[i + 1] if i + 1 < len(ts) else None
            hi = nxt if nxt is not None else self.horizon
            if hi > ts[i]:
                out.append(("open", ts[i], hi, nxt is not None))
            if nxt is not None:
                out.append(("at", nxt))
        return out

    def _firings(self, cursor: int) -> list:
        found: dict = {}
        for order, rule in enumerate(self.model.triggers):
            for piece in self._pieces(cursor):
                m: dict = {}
                ev, tvar = _fresh(rule.event, m), _fresh(rule.time, m)
                body = [_fresh_lit(x, m) for x in rule.body]
                if piece[0] == "at":
                    b = piece[1]
                    r = _unify(tvar, b, {}, ConstraintStore())
                    if r is None:
                        continue
                    self._piece = None
                    for env, _ in self._solve(body, *r, 0):
                        E = _subst(ev, env)
                        found.setdefault(E, []).append((b, False, b, False, order))
                else:
                    _, lo, hi, hi_open = piece
                    st = ConstraintStore().add_all([LinConstraint.make(lo, "<", _T),
                                                    LinConstraint.make(_T, "<" if hi_open else "<=", hi)])
                    r = _unify(tvar, Lin.of(_T), {}, st)
                    if r is None:
                        continue
                    self._piece = self.after(lo)
                    try:
                        for env, st2 in self._solve(body, *r, 0):
                            E = _subst(ev, env)
                            a, a_s, z, z_s = st2.bounds(Lin.of(_T))
                            found.setdefault(E, []).append((a, a_s, z, z_s, order))
                    finally:
                        self._piece = None
        return found

    def close(self) -> list:
        """Add triggered events until nothing new fires; returns ``(time, event)`` pairs."""
        cursor = 0
        while True:
            best = None
            for E, ivs in self._firings(cursor).items():
                for lo, order in _onsets(ivs):
                    if lo < self.times[cursor] or lo > self.horizon or E in self.at.get(lo, ()):
                        continue
                    if best is None or (lo, order) < (best[0], best[1]):
                        best = (lo, order, E)
            if best is None:
                return self.triggered
            if len(self.triggered) >= self.zeno_bound:
                raise ZenoError(self.zeno_bound, [f"{format_term(e)}@{format_number(t)}"
                                                  for t, e in self.triggered])
            lo, _, E = best
            if lo not in self.at:
                self.at[lo] = []
                bisect.insort(self.times, lo)
            self.at[lo].append(E)
            self._after = {b: s for b, s in self._after.items() if b < lo}
            self.triggered.append((lo, E))
            cursor = bisect.bisect_left(self.times, lo)
            log.debug("oracle: %s fires at %s", format_term(E), format_number(lo))


def _one(name, vals, where):
    distinct = []
    for v in vals:
        if v not in distinct:
            distinct.append(v)
    if len(distinct) > 1:
        raise MultiValue(name, where, [_time_text(v) for v in distinct])
    return distinct[0]


def _time_text(t) -> str:
    return format_number(t) if isinstance(t, Fraction) else repr(t)


def _onsets(ivs):
    """Lower ends of the maximal intervals in a union, with the rule order that reaches them first."""
    def key(iv):
        return (iv[0], iv[1], iv[4])

    out = []
    cur = None
    for lo, lo_s, hi, hi_s, order in sorted(ivs, key=key):
        if cur is not None and (lo < cur[2] or (lo == cur[2] and not (lo_s and cur[3]))):
            if hi > cur[2] or (hi == cur[2] and cur[3] and not hi_s):
                cur = (cur[0], cur[1], hi, hi_s)
            continue
        if cur is not None:
            out.append((cur[0], cur[1]))
        cur = (lo, order, hi, hi_s)
    if cur is not None:
        out.append((cur[0], cur[1]))
    return out


# -- traces ------------------------------------------------------------------------------


@dataclass
class SampledTrace:
    dt: Fraction
    horizon: Fraction
    times: list
    rows: dict  # time -> {fluent text: bool | Fraction | None}
    events: list  # (time, event text, source)
    fluents: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "fluent", "value"])
            for t in self.times:
                for f in self.fluents:
                    w.writerow([format_number(t), f, _cell(self.rows[t][f])])

    def series(self, fluent: str) -> list:
        return [(t, self.rows[t][fluent]) for t in self.times]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    return format_number(v)


def _grid(dt: Fraction, horizon: Fraction, extra) -> list:
    pts = set()
    n = 0
    while n * dt <= horizon:
        pts.add(n * dt)
        n += 1
    pts.add(horizon)
    pts.update(t for t in extra if 0 <= t <= horizon)
    return sorted(pts)


def simulate(model: DomainModel, narrative: Narrative, dt, horizon=None, *, zeno_bound: int = 1000) -> SampledTrace:
    """Forward simulation sampled every ``dt`` (event and crossing times added to the grid)."""
    dt = Fraction(dt)
    if dt <= 0:
        raise OracleError(f"time step must be positive, got {format_number(dt)}")
    sim = Simulator(model, narrative, horizon, zeno_bound)
    sim.close()
    grid = _grid(dt, sim.horizon, sim.times)
    bools: dict = {}
    for g in sim.initial.true:
        bools.setdefault(g, None)
    for b in sim.times:
        for g in sim.after(b).true:
            bools.setdefault(g, None)
    names = sorted(format_term(g) for g in bools)
    by_text = {format_term(g): g for g in bools}
    funcs = sorted(sim.functional)
    rows = {}
    for t in grid:
        st = sim.before(t)
        row = {n: by_text[n] in st.true for n in names}
        for f in funcs:
            row[f] = sim.value(st, f, t)
        rows[t] = row
    triggered = {(t, e) for t, e in sim.triggered}
    events = [(b, format_term(e), "triggered" if (b, e) in triggered else "narrative")
              for b in sim.times for e in sim.at[b]]
    return SampledTrace(dt, sim.horizon, grid, rows, events, names + funcs)


# -- cross check ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Discrepancy:
    time: Fraction
    fluent: str
    engine: object
    oracle: object

    def __str__(self) -> str:
        return (f"t = {format_number(self.time)}: {self.fluent} engine={_cell(self.engine) or 'none'} "
                f"oracle={_cell(self.oracle) or 'none'}")

    def to_dict(self) -> dict:
        return {"time": format_number(self.time), "fluent": self.fluent,
                "engine": _cell(self.engine), "oracle": _cell(self.oracle)}


def cross_check(tl, trace: SampledTrace) -> list:
    """Compare engine answers with the trace at every grid point; empty means agreement."""
    from .engine import holds_at, value_at
    from .engine.core import Engine

    out = []
    eng_events = sorted((e.time, format_term(e.event)) for e in tl.events())
    orc_events = sorted((t, e) for t, e, _ in trace.events)
    for t, e in sorted(set(eng_events) ^ set(orc_events)):
        out.append(Discrepancy(t, f"happens({e})", (t, e) in eng_events, (t, e) in orc_events))
    model = tl.model
    bools = {f for f in trace.fluents if f not in model.fluents or not model.is_functional(f)}
    eng = Engine(tl)
    extra = {}
    for name, info in model.fluents.items():
        if not info.functional:
            for g in eng.instances(name):
                extra[format_term(g)] = g
    for t in trace.times:
        row = trace.rows[t]
        for f in sorted(bools | set(extra)):
            expect = row.get(f, False)
            got = holds_at(tl, extra.get(f, f), t)[0]
            if got != expect:
                out.append(Discrepancy(t, f, got, expect))
        for name in sorted(n for n in model.fluents if model.is_functional(n)):
            try:
                got = value_at(tl, name, t)[0]
            except NoValue:
                got = None
            if got != row.get(name):
                out.append(Discrepancy(t, name, got, row.get(name)))
    return out


def check_model(model: DomainModel, narrative: Narrative, dt, *, clip: str = "open", zeno_bound: int = 1000):
    """Close with the engine, simulate with the oracle, return ``(trace, discrepancies)``."""
    from .engine import trigger_closure

    trace = simulate(model, narrative, dt, zeno_bound=zeno_bound)
    tl = trigger_closure(model, narrative, zeno_bound, clip=clip)
    return trace, cross_check(tl, trace)
