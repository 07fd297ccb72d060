"""Abduction of event occurrences and property parameters.

Hypothesised occurrences get symbolic times: one variable per hypothesis,
bounded by its window.  The trigger closure and the goal are evaluated once
per ordering of those times relative to the rest of the timeline (see
:func:`ecrv.engine.timectx.explore`), and the answer stores are projected on
the hypothesis variables.  Every solution keeps one constraint store that
governs all its abduced values; :func:`refine` only ever extends it.
"""

from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

from .clpq import ConstraintStore, LinConstraint
from .engine import (Answer, GoalError, Timeline, TimedEvent, query, trigger_closure)
from .engine.closure import close
from .engine.core import Engine
from .engine.timectx import explore
from .engine import DEFAULT_DEPTH, DEFAULT_ZENO_BOUND, _deep_recursion, parse_goal
from .model import DomainModel, Narrative, Occurrence
from .syntax import format_term, parse_term
from .terms import Lin, Struct, Var, is_ground

log = logging.getLogger(__name__)


class SearchExhausted(Exception):
    """No hypothesis set within the count bounds makes the goal provable."""


class _Unsat:
    def __repr__(self) -> str:
        return "UNSAT"

    def __bool__(self) -> bool:
        return False


UNSAT = _Unsat()


@dataclass(frozen=True)
class AbducibleSpec:
    """Event template that may be hypothesised up to ``max_count`` times in ``[lo, hi]``."""

    event: Struct
    lo: Fraction
    hi: Fraction
    max_count: int = 1

    def __post_init__(self):
        if self.lo is None or self.hi is None:
            raise ValueError("abduction windows must be bounded")
        object.__setattr__(self, "lo", Fraction(self.lo))
        object.__setattr__(self, "hi", Fraction(self.hi))
        if self.lo < 0 or self.hi < self.lo:
            raise ValueError(f"bad window [{self.lo}, {self.hi}]")
        if self.max_count < 1:
            raise ValueError("max_count must be at least 1")
        if isinstance(self.event, str):
            object.__setattr__(self, "event", parse_term(self.event))
        if not is_ground(self.event):
            raise ValueError(f"abducible event {format_term(self.event)} must be ground")

    @classmethod
    def parse(cls, text: str) -> "AbducibleSpec":
        """``event in [lo, hi]`` with an optional ``max N`` suffix."""
        m = _SPEC_RE.fullmatch(text.strip())
        if m is None:
            raise ValueError(f"expected 'event in [lo, hi] max N', got {text!r}")
        lo, hi = m["lo"].strip(), m["hi"].strip()
        if {lo.lower(), hi.lower()} & _INFINITE:
            raise UnboundedWindow(f"abduction window [{lo}, {hi}] is unbounded")
        return cls(parse_term(m["event"].strip()), _num(lo), _num(hi), int(m["count"] or 1))


class UnboundedWindow(ValueError):
    """An abducible window without a finite upper (or lower) bound."""


_SPEC_RE = re.compile(r"(?P<event>.+?)\s+in\s*\[(?P<lo>[^,\]]+),(?P<hi>[^\]]+)\]\s*(?:max\s+(?P<count>\d+))?")
_INFINITE = {"inf", "+inf", "infinity", "oo", "-inf"}


def _num(s: str) -> Fraction:
    t = parse_term(s.strip())
    if not isinstance(t, Fraction):
        raise ValueError(f"not a number: {s!r}")
    return t


@dataclass
class AbducedSolution:
    hypotheses: list  # (event, time Var) pairs
    store: ConstraintStore
    names: dict  # Var -> display name
    answer: Answer | None = None
    model: DomainModel | None = None
    narrative: Narrative | None = None
    goal: object = None
    alternatives: list = field(default_factory=list)  # further convex pieces after a refine

    @property
    def variables(self) -> list[Var]:
        return [t for _, t in self.hypotheses]

    def region(self) -> list[LinConstraint]:
        return self.store.project(self.variables)

    def region_text(self) -> list[str]:
        return [c.to_dsl(self.names) for c in self.region()]

    def hypothesis_text(self) -> list[str]:
        return [f"{format_term(e)}@{self.names.get(t, repr(t))}" for e, t in self.hypotheses]

    def instantiate(self, point: dict) -> Narrative:
        """Narrative with the hypotheses placed at the given times (``Var -> Fraction``)."""
        extra = [Occurrence(e, Fraction(point[t])) for e, t in self.hypotheses]
        return self.narrative.with_events(extra)

    def sample_points(self, n: int, rng) -> list[dict]:
        """Up to ``n`` rational points of the region (vertices, midpoints, random mixes)."""
        vs = self.variables
        if not vs:
            return [{}]
        out = []
        base = self.store.sample()
        for _ in range(n * 4):
            st = self.store
            pt = {}
            for v in vs:
                lo, lo_s, hi, hi_s = st.bounds(v)
                if lo is None and hi is None:
                    x = base.get(v, Fraction(0))
                elif lo is None:
                    x = hi - (1 if hi_s else 0)
                elif hi is None:
                    x = lo + (1 if lo_s else 0)
                elif lo == hi:
                    x = lo
                else:
                    r = Fraction(rng.randint(0, 1000), 1000)
                    x = lo + (hi - lo) * r
                    if (x == lo and lo_s) or (x == hi and hi_s):
                        x = (lo + hi) / 2
                nxt = st.add(LinConstraint.make(v, "=", x))
                if nxt is None:
                    break
                st = nxt
                pt[v] = x
            else:
                if pt not in out:
                    out.append(pt)
            if len(out) >= n:
                break
        return out

    def to_dict(self) -> dict:
        out = {"hypotheses": self.hypothesis_text(), "region": self.region_text()}
        if self.answer is not None:
            out["answer"] = self.answer.to_dict()
        return out


def _symbolic_timeline(model, narrative, hyps, ctx) -> Timeline:
    tl = Timeline(model, Fraction(narrative.horizon), ctx)
    for o in narrative.occurrences:
        tl.insert(TimedEvent(o.event, Fraction(o.time)))
    for e, t in hyps:
        tl.insert(TimedEvent(e, Lin.of(t), "hypothesis"))
    return tl


def _merge_pieces(pieces, var):
    """Union of 1-D convex pieces ``(store, payload)`` over ``var`` where they touch."""
    ivs = []
    for st, payload in pieces:
        lo, lo_s, hi, hi_s = st.bounds(var)
        ivs.append([lo, lo_s, hi, hi_s, st, payload])
    ivs.sort(key=lambda r: (float("-inf") if r[0] is None else r[0], r[1]))
    out = []
    for iv in ivs:
        if out:
            p = out[-1]
            if p[2] is None or iv[0] is None or iv[0] < p[2] or (iv[0] == p[2] and not (iv[1] and p[3])):
                if p[2] is not None and (iv[2] is None or iv[2] > p[2] or (iv[2] == p[2] and p[3] and not iv[3])):
                    p[2], p[3] = iv[2], iv[3]
                continue
        out.append(iv)
    merged = []
    for lo, lo_s, hi, hi_s, st, payload in out:
        cs = []
        if lo is not None:
            cs.append(LinConstraint.make(lo, "<" if lo_s else "<=", var))
        if hi is not None:
            cs.append(LinConstraint.make(var, "<" if hi_s else "<=", hi))
        merged.append((cs, st, payload))
    return merged


def _combos(specs, count):
    """Multisets of spec indices of total size ``count`` within each spec's max_count."""
    for combo in itertools.combinations_with_replacement(range(len(specs)), count):
        if all(combo.count(i) <= specs[i].max_count for i in set(combo)):
            yield combo


def _run(model, narrative, goal, hyps, base, zeno_bound, depth_bound):
    hyp_vars = [t for _, t in hyps]

    def fn(ctx):
        tl = _symbolic_timeline(model, narrative, hyps, ctx)
        eng = Engine(tl, depth_bound=depth_bound, checkpoints=False)
        _deep_recursion(lambda: close(eng, zeno_bound))
        return tl, list(query(tl, goal, store=ctx.store, depth_bound=depth_bound))

    return explore(base, hyp_vars, fn)


def _solutions(model, narrative, goal, hyps, base, names, zeno_bound, depth_bound) -> list[AbducedSolution]:
    hyp_vars = [t for _, t in hyps]
    pieces = []
    for _, (tl, answers) in _run(model, narrative, goal, hyps, base, zeno_bound, depth_bound):
        for a in answers:
            pieces.append((a.store, a))
    if not pieces:
        return []
    mk = lambda st, a: AbducedSolution(list(hyps), st, {**a.names, **names}, a, model, narrative, goal)
    if len(hyp_vars) == 1:
        out = []
        for cs, st, a in _merge_pieces(pieces, hyp_vars[0]):
            region = ConstraintStore().add_all(cs)
            out.append(mk(region, a))
        return out
    seen, out = set(), []
    for st, a in pieces:
        key = tuple(c.to_dsl(names) for c in st.project(hyp_vars))
        if key not in seen:
            seen.add(key)
            out.append(mk(st, a))
    return out


def abduce_events(model: DomainModel, narrative: Narrative, goal, specs: list[AbducibleSpec], *,
                  zeno_bound: int = DEFAULT_ZENO_BOUND, depth_bound: int = DEFAULT_DEPTH,
                  names: list[str] | None = None) -> Iterator[AbducedSolution]:
    """Minimal hypothesis sets (by count, then subset) that make ``goal`` provable."""
    goal = parse_goal(goal)
    for s in specs:
        if s.hi > narrative.horizon:
            raise ValueError(f"window of {format_term(s.event)} exceeds the horizon {narrative.horizon}")
    emitted: list[tuple] = []
    total = sum(s.max_count for s in specs)
    found = False
    for count in range(total + 1):
        for combo in _combos(specs, count):
            if any(_sub_multiset(prev, combo) for prev in emitted):
                continue
            hyps, base, labels = [], ConstraintStore(), {}
            prev_var: dict = {}
            for n, i in enumerate(combo):
                label = names[n] if names and n < len(names) else ("Ts" if count == 1 else f"Ts{n + 1}")
                v = Var(label)
                labels[v] = label
                s = specs[i]
                base = base.add_all([LinConstraint.make(s.lo, "<=", v), LinConstraint.make(v, "<=", s.hi)])
                if i in prev_var:  # same template: fix the order to avoid symmetric duplicates
                    base = base.add(LinConstraint.make(prev_var[i], "<=", v))
                prev_var[i] = v
                hyps.append((s.event, v))
            if base is None:
                continue
            sols = _solutions(model, narrative, goal, hyps, base, labels, zeno_bound, depth_bound)
            if sols:
                emitted.append(combo)
                found = True
                yield from sols
    if not found:
        raise SearchExhausted(f"no set of at most {total} hypothesised events proves the goal")


def _sub_multiset(a: tuple, b: tuple) -> bool:
    return len(a) < len(b) and all(a.count(i) <= b.count(i) for i in set(a))


def refine(solution: AbducedSolution, extra_goal):
    """Extend the solution's single store with ``extra_goal``; returns a solution or UNSAT.

    Variables of ``extra_goal`` named like the solution's hypothesis times
    refer to those times.
    """
    lits, varmap = parse_goal(extra_goal)
    by_name = {n: v for v, n in solution.names.items()}
    sub = {}
    for n, v in varmap.items():
        if n in by_name:
            sub[v] = by_name[n]
    from .engine.core import rename_lit
    lits = [rename_lit(l, sub) for l in lits]
    varmap = {n: sub.get(v, v) for n, v in varmap.items()}
    base_lits, base_vars = solution.goal
    goal = (list(base_lits) + lits, {**base_vars, **{n: v for n, v in varmap.items() if n not in base_vars}})
    hyp_vars = solution.variables
    base = solution.store
    labels = {v: solution.names[v] for v in hyp_vars if v in solution.names}
    pieces = _solutions(solution.model, solution.narrative, goal, solution.hypotheses, base, labels,
                        DEFAULT_ZENO_BOUND, DEFAULT_DEPTH)
    if not pieces:
        return UNSAT
    first = pieces[0]
    first.alternatives = pieces[1:]
    return first


@dataclass
class ParameterRegion:
    constraints: list  # LinConstraint over the parameters
    names: dict
    witness: Answer

    def text(self) -> list[str]:
        return [c.to_dsl(self.names) for c in self.constraints]

    def to_dict(self) -> dict:
        return {"region": self.text(), "witness": self.witness.to_dict()}


def abduce_parameters(model: DomainModel, narrative: Narrative, goal, params: list[str], *,
                      fixed: dict | None = None, zeno_bound: int = DEFAULT_ZENO_BOUND,
                      depth_bound: int = DEFAULT_DEPTH, timeline: Timeline | None = None) -> list[ParameterRegion]:
    """Regions of parameter values for which ``goal`` has a witness on the closed timeline."""
    lits, varmap = parse_goal(goal)
    missing = [p for p in list(params) + list(fixed or {}) if p not in varmap]
    if missing:
        raise GoalError(f"parameters not in goal: {', '.join(missing)}")
    base = ConstraintStore()
    for p, val in (fixed or {}).items():
        base = base.add(LinConstraint.make(varmap[p], "=", Fraction(val)))
        if base is None:
            return []
    tl = timeline or trigger_closure(model, narrative, zeno_bound, depth_bound=depth_bound)
    pvars = [varmap[p] for p in params]
    names = {v: n for n, v in varmap.items()}
    pieces = []
    for a in query(tl, (lits, varmap), store=base, depth_bound=depth_bound):
        st = a.store
        pieces.append((ConstraintStore().add_all(st.project(pvars)), a))
    if len(pvars) == 1 and pieces:
        return [ParameterRegion(cs, names, a) for cs, _, a in _merge_pieces(pieces, pvars[0])]
    out, seen = [], set()
    for st, a in pieces:
        cs = st.constraints()
        key = tuple(c.to_dsl(names) for c in cs)
        if key not in seen:
            seen.add(key)
            out.append(ParameterRegion(cs, names, a))
    return out
