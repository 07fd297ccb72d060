"""Scenario consistency checks and safety-property checks over closed timelines."""

from __future__ import annotations

import json
import logging
import time as _time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .engine import (EngineError, close_timeline, GoalError, NoValue, Stats, Timeline, query, trigger_closure,
                     value_at)
from .engine.core import Engine
from .engine.proof import node_to_dict
from .model import (Constraint, DomainModel, Happens, Holds, Narrative, NonStratifiedError, Not,
                    UserLit, narrative_from_clauses)
from .syntax import format_term, parse_clauses
from .terms import Struct, Var, format_number, is_number

log = logging.getLogger(__name__)


class MissingInput(ValueError):
    """A sweep was given no narratives."""


class StageOrderWarning(UserWarning):
    """A later stage fired an event before an event materialised by an earlier stage."""


def _fmt(x) -> str:
    return format_number(x) if isinstance(x, Fraction) else format_term(x)


# -- reports ----------------------------------------------------------------


@dataclass
class PostconditionResult:
    goal: str
    when: str
    ok: bool
    explanation: str = ""
    answer: dict | None = None

    def to_dict(self) -> dict:
        out = {"goal": self.goal, "when": self.when, "ok": self.ok}
        if self.explanation:
            out["explanation"] = self.explanation
        if self.answer is not None:
            out["answer"] = self.answer
        return out


@dataclass
class Report:
    name: str
    kind: str  # scenario | property
    verdict: str  # consistent | inconsistent | pass | violation | error
    results: list = field(default_factory=list)
    witness: dict | None = None
    explanation: str = ""
    provenance: str = ""
    stats: dict = field(default_factory=dict)
    elapsed: float = 0.0

    @property
    def failed(self) -> list:
        return [r for r in self.results if not r.ok]

    def to_dict(self, timing: bool = False, stats: bool = False) -> dict:
        out = {"name": self.name, "kind": self.kind, "verdict": self.verdict}
        if self.provenance:
            out["provenance"] = self.provenance
        if self.results:
            out["postconditions"] = [r.to_dict() for r in self.results]
        if self.witness is not None:
            out["witness"] = self.witness
        if self.explanation:
            out["explanation"] = self.explanation
        if stats and self.stats:
            out["stats"] = self.stats
        if timing:
            out["elapsed_s"] = round(self.elapsed, 6)
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=2)

    def text(self) -> str:
        lines = [f"{self.name}: {self.verdict}"]
        for r in self.results:
            mark = "ok  " if r.ok else "FAIL"
            line = f"  {mark} {r.goal} {r.when}"
            if r.explanation:
                line += f" -- {r.explanation}"
            lines.append(line)
        if self.witness:
            w = ", ".join(f"{k} = {v}" for k, v in self.witness.items() if k != "proof")
            lines.append(f"  witness: {w}")
        if self.explanation and not self.results:
            lines.append(f"  {self.explanation}")
        return "\n".join(lines)


@dataclass
class SummaryReport:
    reports: list
    counts: dict

    def to_dict(self, **kw) -> dict:
        return {"counts": self.counts, "reports": [r.to_dict(**kw) for r in self.reports]}

    def text(self) -> str:
        body = "\n".join(r.text() for r in self.reports)
        tally = ", ".join(f"{k}: {v}" for k, v in sorted(self.counts.items()))
        return f"{body}\n{tally}"


# -- scenarios ------------------------------------------------------------------


@dataclass
class Postcondition:
    goal: object  # term as written in the scenario file
    mode: str  # at | by
    time: Fraction
    line: int = 0

    def describe(self) -> str:
        return f"{self.mode} {_fmt(self.time)}"


@dataclass
class Scenario:
    name: str
    narrative: Narrative
    postconditions: list
    provenance: str = ""

    def __post_init__(self):
        for p in self.postconditions:
            if p.time > self.narrative.horizon or p.time < 0:
                raise ValueError(f"postcondition time {_fmt(p.time)} outside [0, {_fmt(self.narrative.horizon)}]")


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    """Narrative facts plus ``expect(Goal, at(T)).`` / ``expect(Goal, by(T)).`` clauses.

    Optional ``scenario(Name).`` and ``provenance('text').`` facts name the
    scenario and record the use case it encodes.
    """
    clauses = parse_clauses(text)
    narrative, rest = narrative_from_clauses(clauses, allow_other=True)
    posts, provenance = [], ""
    for c in rest:
        h = c.head
        if h.functor == "expect" and h.arity == 2 and not c.body:
            goal, when = h.args
            if not (isinstance(when, Struct) and when.functor in ("at", "by") and when.arity == 1
                    and is_number(when.args[0])):
                raise GoalError(f"{c.line}:{c.col}: second argument of expect must be at(T) or by(T)")
            posts.append(Postcondition(goal, when.functor, Fraction(when.args[0]), c.line))
        elif h.functor == "scenario" and h.arity == 1:
            name = format_term(h.args[0])
        elif h.functor == "provenance" and h.arity == 1:
            provenance = h.args[0].functor if isinstance(h.args[0], Struct) else format_term(h.args[0])
        else:
            raise GoalError(f"{c.line}:{c.col}: unexpected clause {format_term(h)} in scenario")
    return Scenario(name, narrative, posts, provenance)


def load_scenario(path) -> Scenario:
    p = Path(path)
    return parse_scenario(p.read_text(), p.stem)


def _goal_literals(model: DomainModel, g, tv):
    """Literal list for one postcondition goal term at time ``tv``."""
    if isinstance(g, Struct) and g.functor == "not" and g.arity == 1:
        inner = _goal_literals(model, g.args[0], tv)
        if len(inner) != 1:
            raise GoalError(f"cannot negate {format_term(g.args[0])}")
        return [Not(inner[0])]
    if not isinstance(g, Struct):
        raise GoalError(f"bad postcondition goal {format_term(g)}")
    if g.functor == "holdsAt" and g.arity in (1, 2):
        return [Holds(g.args[0], tv if g.arity == 1 else g.args[1])]
    if g.functor == "happens" and g.arity in (1, 2):
        return [Happens(g.args[0], tv if g.arity == 1 else g.args[1])]
    return [UserLit(g)]


def _value_goal(model: DomainModel, g):
    """``(name, expected)`` when the goal asserts a functional fluent's value."""
    if isinstance(g, Struct) and g.functor == "holdsAt" and g.args:
        f = g.args[0]
        if isinstance(f, Struct) and f.arity == 1 and model.is_functional(f.functor) and is_number(f.args[0]):
            return f.functor, Fraction(f.args[0])
    return None


def _check_post(tl: Timeline, eng: Engine, p: Postcondition) -> PostconditionResult:
    model = tl.model
    goal_text = format_term(p.goal)
    if p.mode == "at":
        lits = _goal_literals(model, p.goal, p.time)
        pre = []
    else:
        T = Var("T")
        lits = _goal_literals(model, p.goal, T)
        pre = [Constraint(">=", T, Fraction(0)), Constraint("<=", T, p.time)]
    answers = list(query(tl, (pre + lits, {}), engine=eng))
    if answers:
        return PostconditionResult(goal_text, p.describe(), True, answer=answers[0].to_dict(with_proof=False))
    why = "goal not provable"
    vg = _value_goal(model, p.goal)
    if vg is not None and p.mode == "at":
        name, expected = vg
        try:
            actual, _ = value_at(tl, name, p.time)
            why = f"expected {name} = {_fmt(expected)}, actual value {_fmt(actual)}"
        except NoValue:
            why = f"expected {name} = {_fmt(expected)}, but it has no value"
    elif vg is not None:
        why = f"{vg[0]} never equals {_fmt(vg[1])} up to {_fmt(p.time)}"
    elif isinstance(p.goal, Struct) and p.goal.functor == "not":
        why = "negated goal holds"
    return PostconditionResult(goal_text, p.describe(), False, why)


def check_scenario(model: DomainModel, scenario: Scenario, *, zeno_bound: int = 1000, tabling: bool = True,
                   stats: Stats | None = None, depth_bound: int = 10000) -> Report:
    """Consistent iff every postcondition is provable on the scenario's closed timeline."""
    stats = stats if stats is not None else Stats()
    t0 = _time.perf_counter()
    try:
        tl, eng = close_timeline(model, scenario.narrative, zeno_bound, stats=stats, tabling=tabling,
                                 depth_bound=depth_bound)
        results = [_check_post(tl, eng, p) for p in scenario.postconditions]
    except (EngineError, NonStratifiedError, GoalError) as e:
        return Report(scenario.name, "scenario", "error", explanation=f"{type(e).__name__}: {e}",
                      provenance=scenario.provenance, stats=stats.as_dict(),
                      elapsed=_time.perf_counter() - t0)
    verdict = "consistent" if all(r.ok for r in results) else "inconsistent"
    failing = [r for r in results if not r.ok]
    expl = "; ".join(f"{r.goal} {r.when}: {r.explanation}" for r in failing)
    return Report(scenario.name, "scenario", verdict, results, explanation=expl, provenance=scenario.provenance,
                  stats=stats.as_dict(), elapsed=_time.perf_counter() - t0)


# -- properties -------------------------------------------------------------------


@dataclass(frozen=True)
class Overdose:
    """More than ``max_volume`` delivered within some window of width ``window``."""

    max_volume: Fraction
    window: Fraction
    fluent: str = "total_drug_delivered"

    def __post_init__(self):
        if self.max_volume < 0 or self.window < 0:
            raise ValueError("overdose bounds must be non-negative")

    @property
    def name(self) -> str:
        return f"overdose({_fmt(Fraction(self.max_volume))}, {_fmt(Fraction(self.window))})"

    def goal(self, M="M", W="W") -> str:
        f = self.fluent
        return (f"holdsAt({f}(V1), T1), holdsAt({f}(V2), T2), T1 #< T2, T2 - T1 #=< {W}, "
                f"V2 - V1 #> {M}")


@dataclass(frozen=True)
class ResponseTime:
    """Every ``trigger`` occurrence is followed by ``response`` within ``deadline`` (inclusive)."""

    trigger: str
    response: str
    deadline: Fraction

    def __post_init__(self):
        if self.deadline < 0:
            raise ValueError("deadline must be non-negative")

    @property
    def name(self) -> str:
        return f"response({self.trigger}, {self.response}, {_fmt(Fraction(self.deadline))})"


@dataclass(frozen=True)
class RawGoal:
    """Any answer to ``goal`` is a violation."""

    goal: str
    label: str = ""

    @property
    def name(self) -> str:
        return self.label or f"goal({self.goal})"


PropertySpec = Overdose | ResponseTime | RawGoal


def _overdose(tl: Timeline, prop: Overdose, eng: Engine):
    M, W = Fraction(prop.max_volume), Fraction(prop.window)
    if not tl.model.is_functional(prop.fluent):
        raise NoValue(prop.fluent, "any time")
    goal = prop.goal(_fmt_goal(M), _fmt_goal(W))
    answers = list(query(tl, goal, engine=eng))
    if not answers:
        return None
    h = tl.horizon

    def val(t):
        try:
            return value_at(tl, prop.fluent, t)[0]
        except NoValue:
            return None

    # the maximum of v(T2) - v(T1) sits on a vertex of the segment arrangement
    starts = sorted({b for b in tl.times} | {b - W for b in tl.times if 0 <= b - W} | {Fraction(0)})
    for t1 in starts:
        if t1 > h:
            continue
        ends = sorted({min(t1 + W, h)} | {b for b in tl.times if t1 < b <= t1 + W})
        for t2 in ends:
            if t2 <= t1:
                continue
            v1, v2 = val(t1), val(t2)
            if v1 is not None and v2 is not None and v2 - v1 > M:
                return {"T1": _fmt(t1), "T2": _fmt(t2), "V1": _fmt(v1), "V2": _fmt(v2),
                        "delivered": _fmt(v2 - v1)}
    # a jump makes the supremum unattained at vertices: fall back to a sample of the first answer
    a = answers[0]
    pt = a.store.sample()
    names = {v: n for v, n in a.names.items()}
    out = {}
    for v, x in pt.items():
        if v in names:
            out[names[v]] = _fmt(x)
    for k, v in a.bindings.items():
        out.setdefault(k, _fmt(v) if isinstance(v, Fraction) else str(a.binding_text()[k]))
    return out


def _fmt_goal(x: Fraction) -> str:
    return f"({x.numerator}/{x.denominator})" if x.denominator != 1 else str(x.numerator)


def _response(tl: Timeline, prop: ResponseTime, eng: Engine):
    D = Fraction(prop.deadline)
    trig = [e for e in tl.events() if format_term(e.event) == prop.trigger]
    for e in trig:
        t = e.time
        if t + D > tl.horizon:
            continue  # the deadline lies beyond the horizon: nothing observable
        goal = f"happens({prop.response}, R), R #>= {_fmt_goal(t)}, R #=< {_fmt_goal(t + D)}"
        if not list(query(tl, goal, engine=eng)):
            return {"trigger": prop.trigger, "trigger_time": _fmt(t), "deadline": _fmt(t + D)}
    return None


def _raw(tl: Timeline, prop: RawGoal, eng: Engine):
    answers = list(query(tl, prop.goal, engine=eng))
    if not answers:
        return None
    a = answers[0]
    return {"answer": str(a), "proof": [node_to_dict(n, a.names) for n in a.proof]}


def check_property(model: DomainModel, narrative: Narrative, prop, *, zeno_bound: int = 1000,
                   tabling: bool = True, stats: Stats | None = None, timeline: Timeline | None = None,
                   name: str = "") -> Report:
    """``violation`` with a witness when the property fails on the closed timeline, else ``pass``."""
    stats = stats if stats is not None else Stats()
    t0 = _time.perf_counter()
    label = name or prop.name
    try:
        if timeline is None:
            tl, eng = close_timeline(model, narrative, zeno_bound, stats=stats, tabling=tabling)
        else:
            tl, eng = timeline, Engine(timeline, tabling=tabling, stats=stats)
        if isinstance(prop, Overdose):
            w = _overdose(tl, prop, eng)
        elif isinstance(prop, ResponseTime):
            w = _response(tl, prop, eng)
        elif isinstance(prop, RawGoal):
            w = _raw(tl, prop, eng)
        else:
            raise TypeError(f"unknown property {prop!r}")
    except (EngineError, NonStratifiedError, GoalError) as e:
        return Report(label, "property", "error", explanation=f"{type(e).__name__}: {e}",
                      stats=stats.as_dict(), elapsed=_time.perf_counter() - t0)
    verdict = "violation" if w is not None else "pass"
    return Report(label, "property", verdict, witness=w, explanation=prop.name, stats=stats.as_dict(),
                  elapsed=_time.perf_counter() - t0)


def sweep(model: DomainModel, narratives, prop, **kw) -> SummaryReport:
    """Check one property over several narratives; a failing narrative only spoils its own slot."""
    items = list(narratives.items()) if isinstance(narratives, dict) else [
        x if isinstance(x, tuple) else (f"narrative{i + 1}", x) for i, x in enumerate(narratives)]
    if not items:
        raise MissingInput("sweep needs at least one narrative")
    reports = []
    for nm, nar in items:
        try:
            r = check_property(model, nar, prop, name=f"{nm}: {prop.name}", **kw)
        except Exception as e:  # noqa: BLE001 -- isolation contract
            r = Report(f"{nm}: {prop.name}", "property", "error", explanation=f"{type(e).__name__}: {e}")
        reports.append(r)
    counts: dict = {}
    for r in reports:
        counts[r.verdict] = counts.get(r.verdict, 0) + 1
    return SummaryReport(reports, counts)


# -- staged closure -------------------------------------------------------------------


def staged_run(model: DomainModel, narrative: Narrative, stages, *, zeno_bound: int = 1000) -> Timeline:
    """Close the timeline one group of trigger rules at a time.

    Each stage's triggered events become plain narrative facts for the next
    stage.  Stages are given as lists of trigger rules or rule ids and must
    partition the model's trigger rules.
    """
    ids = [[r if isinstance(r, str) else r.rid for r in stage] for stage in stages]
    flat = [i for s in ids for i in s]
    all_ids = [r.rid for r in model.triggers]
    if sorted(flat) != sorted(all_ids):
        raise ValueError("stages must partition the trigger rules")
    current = narrative
    latest_materialised = None
    for n, stage in enumerate(ids):
        sub = model.restricted([r for r in model.triggers if r.rid in stage])
        tl = trigger_closure(sub, current, zeno_bound)
        fired = [e for e in tl.events() if e.source == "triggered"]
        if latest_materialised is not None:
            early = [e for e in fired if e.time < latest_materialised]
            if early:
                warnings.warn(StageOrderWarning(
                    f"stage {n + 1} fired {', '.join(map(str, early))} before an event materialised by an "
                    f"earlier stage at {_fmt(latest_materialised)}"), stacklevel=2)
        if fired:
            t = max(e.time for e in fired)
            latest_materialised = t if latest_materialised is None else max(latest_materialised, t)
        current = tl.to_narrative()
    final = Timeline.from_narrative(model, current)
    final.closed = True
    return final
