"""Event Calculus domain models and narratives.

A domain file is a list of clauses (see :mod:`ecrv.syntax`).  Clauses are
sorted into typed rules by their head:

* ``fluent(F)`` / ``event(E)`` declarations;
* ``initiates/terminates/releases(E, F, T) :- body`` effect rules;
* ``trajectory(S, T1, F, T2) :- body`` continuous change laws;
* ``happens(E, T) :- body`` trigger rules;
* ``initiallyP(F) :- body`` initial state;
* anything else is an auxiliary user predicate (facts such as flow rates).
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import networkx as nx

from .syntax import Clause, ParseError, clauses_equal, format_clause, format_term, parse_clauses
from .terms import Struct, Var, is_ground, is_number, term_vars

log = logging.getLogger(__name__)

EC_PREDICATES = {("holdsAt", 2), ("happens", 2), ("initiallyP", 1)}
CONSTRAINT_OPS = {
    "#=": "=", "#\\=": "!=", "#<": "<", "#=<": "<=", "#>": ">", "#>=": ">=",
    "<": "<", "=<": "<=", ">": ">", ">=": ">=",
}
UNIFY_OPS = {"=": False, "\\=": True}


# -- literals ---------------------------------------------------------------


@dataclass(frozen=True)
class Holds:
    fluent: object
    time: object


@dataclass(frozen=True)
class Happens:
    event: object
    time: object


@dataclass(frozen=True)
class InitiallyLit:
    fluent: object


@dataclass(frozen=True)
class Constraint:
    op: str  # one of = != < <= > >=
    lhs: object
    rhs: object


@dataclass(frozen=True)
class Unify:
    lhs: object
    rhs: object
    negated: bool = False


@dataclass(frozen=True)
class UserLit:
    atom: Struct


@dataclass(frozen=True)
class Not:
    inner: object  # Holds, Happens, InitiallyLit or UserLit


Literal = object


def classify_literal(t) -> Literal:
    if not isinstance(t, Struct):
        raise ValueError(f"body literal must be a predicate, got {format_term(t)}")
    f, n = t.functor, t.arity
    if f == "not" and n == 1:
        inner = classify_literal(t.args[0])
        if not isinstance(inner, (Holds, Happens, InitiallyLit, UserLit)):
            raise ValueError(f"cannot negate {format_term(t.args[0])}")
        return Not(inner)
    if f == "holdsAt" and n == 2:
        return Holds(*t.args)
    if f == "happens" and n == 2:
        return Happens(*t.args)
    if f == "initiallyP" and n == 1:
        return InitiallyLit(t.args[0])
    if n == 2 and f in CONSTRAINT_OPS:
        return Constraint(CONSTRAINT_OPS[f], *t.args)
    if n == 2 and f in UNIFY_OPS:
        return Unify(t.args[0], t.args[1], UNIFY_OPS[f])
    return UserLit(t)


def literal_term(lit) -> Struct:
    """Inverse of :func:`classify_literal`."""
    if isinstance(lit, Not):
        return Struct("not", (literal_term(lit.inner),))
    if isinstance(lit, Holds):
        return Struct("holdsAt", (lit.fluent, lit.time))
    if isinstance(lit, Happens):
        return Struct("happens", (lit.event, lit.time))
    if isinstance(lit, InitiallyLit):
        return Struct("initiallyP", (lit.fluent,))
    if isinstance(lit, Constraint):
        op = {v: k for k, v in CONSTRAINT_OPS.items() if k.startswith("#")}[lit.op]
        return Struct(op, (lit.lhs, lit.rhs))
    if isinstance(lit, Unify):
        return Struct("\\=" if lit.negated else "=", (lit.lhs, lit.rhs))
    return lit.atom


def literal_vars(lit) -> set:
    return term_vars(literal_term(lit))


# -- rules ------------------------------------------------------------------


@dataclass(frozen=True)
class Rule:
    rid: str
    body: tuple
    line: int
    col: int
    clause: Clause = field(compare=False, repr=False)


@dataclass(frozen=True)
class EffectRule(Rule):
    kind: str = "initiates"  # initiates | terminates | releases
    event: object = None
    fluent: object = None
    time: object = None


@dataclass(frozen=True)
class TrajectoryRule(Rule):
    state: object = None
    t1: object = None
    fluent: object = None
    t2: object = None


@dataclass(frozen=True)
class TriggerRule(Rule):
    event: object = None
    time: object = None


@dataclass(frozen=True)
class InitiallyRule(Rule):
    fluent: object = None


@dataclass(frozen=True)
class UserClause(Rule):
    head: Struct = None


@dataclass(frozen=True)
class Declaration:
    name: str
    arity: int
    template: Struct
    line: int
    col: int


@dataclass(frozen=True)
class FluentInfo:
    name: str
    arity: int
    functional: bool
    declared: bool


@dataclass
class DomainModel:
    """Parsed EC theory.  Treat as immutable once built."""

    clauses: list = field(default_factory=list)
    fluent_decls: list = field(default_factory=list)
    event_decls: list = field(default_factory=list)
    effects: list = field(default_factory=list)
    trajectories: list = field(default_factory=list)
    triggers: list = field(default_factory=list)
    initially: list = field(default_factory=list)
    user: list = field(default_factory=list)

    def __post_init__(self):
        self._index()

    def _index(self):
        self.effects_by_fluent: dict[str, list[EffectRule]] = defaultdict(list)
        for r in self.effects:
            if isinstance(r.fluent, Struct):
                self.effects_by_fluent[r.fluent.functor].append(r)
        self.traj_by_fluent: dict[str, list[TrajectoryRule]] = defaultdict(list)
        self.traj_by_state: dict[str, list[TrajectoryRule]] = defaultdict(list)
        for r in self.trajectories:
            self.traj_by_fluent[r.fluent.functor].append(r)
            self.traj_by_state[r.state.functor].append(r)
        self.user_by_key: dict[tuple, list[UserClause]] = defaultdict(list)
        for r in self.user:
            self.user_by_key[r.head.key].append(r)
        self.initially_by_fluent: dict[str, list[InitiallyRule]] = defaultdict(list)
        for r in self.initially:
            if isinstance(r.fluent, Struct):
                self.initially_by_fluent[r.fluent.functor].append(r)
        self.fluents = self._fluent_table()
        self.events = {d.name: d.arity for d in self.event_decls}

    def _fluent_table(self) -> dict[str, FluentInfo]:
        # An arity-1 fluent is functional (its argument is the value) unless
        # some use gives it a symbolic argument such as door_open(front).
        arities: dict[str, int] = {}
        symbolic: set[str] = set()
        declared = {d.name for d in self.fluent_decls}
        for d in self.fluent_decls:
            arities.setdefault(d.name, d.arity)
        for r in self.all_rules():
            for kind, ref in _ec_refs(r):
                if kind == "fluent" and isinstance(ref, Struct):
                    arities.setdefault(ref.functor, ref.arity)
                    if ref.arity == 1 and isinstance(ref.args[0], Struct) and ref.args[0].functor not in "+-*/":
                        symbolic.add(ref.functor)
            for lit in r.body:
                inner = lit.inner if isinstance(lit, Not) else lit
                if isinstance(inner, InitiallyLit) and isinstance(inner.fluent, Struct):
                    arities.setdefault(inner.fluent.functor, inner.fluent.arity)
        for d in self.fluent_decls:
            if d.arity == 1 and isinstance(d.template.args[0], Struct):
                symbolic.add(d.name)
        return {name: FluentInfo(name, arity, arity == 1 and name not in symbolic, name in declared)
                for name, arity in arities.items()}

    def all_rules(self) -> list[Rule]:
        return self.effects + self.trajectories + self.triggers + self.initially + self.user

    def is_functional(self, name: str) -> bool:
        info = self.fluents.get(name)
        return bool(info and info.functional)

    def counts(self) -> dict[str, int]:
        return {
            "fluents": len(self.fluents),
            "events": len(self.events),
            "initiates": sum(r.kind == "initiates" for r in self.effects),
            "terminates": sum(r.kind == "terminates" for r in self.effects),
            "releases": sum(r.kind == "releases" for r in self.effects),
            "trajectories": len(self.trajectories),
            "triggers": len(self.triggers),
            "initially": len(self.initially),
            "facts": len(self.user),
            "rules": len(self.all_rules()),
        }

    def to_text(self) -> str:
        return "\n".join(format_clause(c) for c in self.clauses) + ("\n" if self.clauses else "")

    def equivalent(self, other: "DomainModel") -> bool:
        return len(self.clauses) == len(other.clauses) and all(
            clauses_equal(a, b) for a, b in zip(self.clauses, other.clauses))

    def restricted(self, triggers) -> "DomainModel":
        """Copy keeping only the given trigger rules (used by staged runs)."""
        keep = {r.rid for r in triggers}
        return DomainModel(self.clauses, self.fluent_decls, self.event_decls, self.effects,
                           self.trajectories, [r for r in self.triggers if r.rid in keep],
                           self.initially, self.user)

    def rule(self, rid: str) -> Rule | None:
        for r in self.all_rules():
            if r.rid == rid:
                return r
        return None


def _body(c: Clause) -> tuple:
    out = []
    for t, (line, col) in zip(c.body, c.body_pos):
        try:
            out.append(classify_literal(t))
        except ValueError as exc:
            raise ParseError(str(exc), line, col) from None
    return tuple(out)


def build_model(clauses: list[Clause]) -> DomainModel:
    fluents, events, effects, trajs, triggers, initially, user = [], [], [], [], [], [], []
    for c in clauses:
        h = c.head
        f, n = h.functor, h.arity
        rid = f"{f}@{c.line}:{c.col}"
        common = dict(rid=rid, body=_body(c), line=c.line, col=c.col, clause=c)
        if f in ("fluent", "event") and n == 1 and not c.body:
            tmpl = h.args[0]
            if not isinstance(tmpl, Struct):
                raise ParseError(f"{f} declaration needs a name", c.line, c.col)
            d = Declaration(tmpl.functor, tmpl.arity, tmpl, c.line, c.col)
            (fluents if f == "fluent" else events).append(d)
        elif f in ("initiates", "terminates", "releases") and n == 3:
            effects.append(EffectRule(kind=f, event=h.args[0], fluent=h.args[1], time=h.args[2], **common))
        elif f == "trajectory" and n == 4:
            trajs.append(TrajectoryRule(state=h.args[0], t1=h.args[1], fluent=h.args[2], t2=h.args[3], **common))
        elif f == "happens" and n == 2:
            triggers.append(TriggerRule(event=h.args[0], time=h.args[1], **common))
        elif f == "initiallyP" and n == 1:
            initially.append(InitiallyRule(fluent=h.args[0], **common))
        elif (f, n) in EC_PREDICATES or f in CONSTRAINT_OPS or f in UNIFY_OPS or f == "not":
            raise ParseError(f"{f}/{n} cannot be defined by a clause", c.line, c.col)
        else:
            user.append(UserClause(head=h, **common))
    return DomainModel(list(clauses), fluents, events, effects, trajs, triggers, initially, user)


def parse_domain(text: str) -> DomainModel:
    """Parse a domain file.  Raises :class:`ParseError`; never returns a partial model."""
    return build_model(parse_clauses(text))


# -- narratives -------------------------------------------------------------


class NarrativeError(ValueError):
    pass


class NegativeTime(NarrativeError):
    pass


class MissingHorizon(NarrativeError):
    pass


class BeyondHorizon(NarrativeError):
    pass


@dataclass(frozen=True)
class Occurrence:
    event: Struct
    time: Fraction

    def __str__(self) -> str:
        return f"{format_term(self.event)}@{format_term(self.time)}"


@dataclass(frozen=True)
class Narrative:
    occurrences: tuple
    horizon: Fraction

    def __post_init__(self):
        occ = tuple(sorted(self.occurrences, key=lambda o: o.time))
        object.__setattr__(self, "occurrences", occ)
        object.__setattr__(self, "horizon", Fraction(self.horizon))

    def with_events(self, extra) -> "Narrative":
        return Narrative(self.occurrences + tuple(extra), self.horizon)

    def to_text(self) -> str:
        lines = [f"happens({format_term(o.event)}, {format_term(o.time)})." for o in self.occurrences]
        lines.append(f"horizon({format_term(self.horizon)}).")
        return "\n".join(lines) + "\n"


def _time_value(t, line: int, col: int) -> Fraction:
    if not is_number(t):
        raise ParseError(f"expected a rational time, got {format_term(t)}", line, col, ("number",))
    return Fraction(t)


def narrative_from_clauses(clauses, *, allow_other: bool = False):
    """Split clauses into a Narrative and the remaining (non-narrative) clauses."""
    occ, horizon, rest = [], None, []
    for c in clauses:
        h = c.head
        if h.functor == "happens" and h.arity == 2 and not c.body:
            ev, t = h.args
            if not isinstance(ev, Struct) or not is_ground(ev):
                raise ParseError("narrative events must be ground", c.line, c.col)
            time = _time_value(t, c.line, c.col)
            if time < 0:
                raise NegativeTime(f"{c.line}:{c.col}: event {format_term(ev)} at negative time {format_term(time)}")
            occ.append(Occurrence(ev, time))
        elif h.functor == "horizon" and h.arity == 1 and not c.body:
            if horizon is not None:
                raise ParseError("duplicate horizon", c.line, c.col)
            horizon = _time_value(h.args[0], c.line, c.col)
            if horizon < 0:
                raise NegativeTime(f"{c.line}:{c.col}: negative horizon")
        elif allow_other:
            rest.append(c)
        else:
            raise ParseError("expected happens(Event, Time) or horizon(Time)", c.line, c.col,
                             ("happens", "horizon"))
    if horizon is None:
        raise MissingHorizon("narrative has no horizon(T) fact")
    for o in occ:
        if o.time > horizon:
            raise BeyondHorizon(f"event {o} lies beyond horizon {format_term(horizon)}")
    return Narrative(tuple(occ), horizon), rest


def parse_narrative(text: str) -> Narrative:
    return narrative_from_clauses(parse_clauses(text))[0]


# -- diagnostics ------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # error | warning
    message: str
    line: int = 0
    col: int = 0

    def to_dict(self) -> dict:
        return {"severity": self.severity, "message": self.message, "line": self.line, "col": self.col}

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.severity}: {self.message}"


def diagnostics_json(diags) -> str:
    return json.dumps([d.to_dict() for d in diags], indent=2)


def has_errors(diags) -> bool:
    return any(d.severity == "error" for d in diags)


def _ec_refs(rule: Rule):
    """Yield ('fluent'|'event', term) references made by a rule head and body."""
    if isinstance(rule, EffectRule):
        yield "event", rule.event
        yield "fluent", rule.fluent
    elif isinstance(rule, TrajectoryRule):
        yield "fluent", rule.state
        yield "fluent", rule.fluent
    elif isinstance(rule, TriggerRule):
        yield "event", rule.event
    elif isinstance(rule, InitiallyRule):
        yield "fluent", rule.fluent
    for lit in rule.body:
        inner = lit.inner if isinstance(lit, Not) else lit
        if isinstance(inner, Holds):
            yield "fluent", inner.fluent
        elif isinstance(inner, Happens):
            yield "event", inner.event


def _time_vars(rule: Rule) -> set:
    if isinstance(rule, (EffectRule, TriggerRule)):
        return term_vars(rule.time)
    if isinstance(rule, TrajectoryRule):
        return term_vars(rule.t1) | term_vars(rule.t2)
    return set()


def _head_term(rule: Rule):
    if isinstance(rule, UserClause):
        return rule.head
    return rule.clause.head


def parameter_vars(body) -> set:
    """Variables bound to constants by facts or initial values."""
    out = set()
    for lit in body:
        if isinstance(lit, UserLit):
            out |= term_vars(lit.atom)
        elif isinstance(lit, InitiallyLit):
            out |= term_vars(lit.fluent)
    return out


def nonlinear_terms(expr, params: set):
    """Yield sub-terms multiplying/dividing by a non-parameter variable expression."""
    def variable(t) -> bool:
        return bool(term_vars(t) - params)

    if isinstance(expr, Struct):
        if expr.functor == "*" and expr.arity == 2 and variable(expr.args[0]) and variable(expr.args[1]):
            yield expr
        elif expr.functor == "/" and expr.arity == 2 and variable(expr.args[1]):
            yield expr
        for a in expr.args:
            yield from nonlinear_terms(a, params)


def validate_model(model: DomainModel) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    fl_arity: dict[str, int] = {}
    ev_arity: dict[str, int] = {}
    for kind, decls, table in (("fluent", model.fluent_decls, fl_arity), ("event", model.event_decls, ev_arity)):
        for d in decls:
            if d.name in table and table[d.name] != d.arity:
                diags.append(Diagnostic("error", f"arity conflict for {kind} {d.name}: "
                                                 f"{table[d.name]} vs {d.arity}", d.line, d.col))
            table.setdefault(d.name, d.arity)
    implicit: set[str] = set()
    for r in model.all_rules():
        for lit in r.body:
            inner = lit.inner if isinstance(lit, Not) else lit
            if isinstance(inner, InitiallyLit) and isinstance(inner.fluent, Struct):
                name = inner.fluent.functor
                if name not in fl_arity and name not in implicit:
                    implicit.add(name)
                    diags.append(Diagnostic("warning", f"fluent {name} is not declared; treated as a parameter "
                                                       f"fluent given by initiallyP", r.line, r.col))
                    fl_arity[name] = inner.fluent.arity
    reported = set()
    for r in model.all_rules():
        for kind, ref in _ec_refs(r):
            if isinstance(ref, Var):
                continue
            if not isinstance(ref, Struct):
                diags.append(Diagnostic("error", f"{kind} must be a term, got {format_term(ref)}", r.line, r.col))
                continue
            table = fl_arity if kind == "fluent" else ev_arity
            key = (kind, ref.functor, r.rid)
            if ref.functor not in table:
                if key not in reported:
                    reported.add(key)
                    diags.append(Diagnostic("error", f"undeclared {kind} {ref.functor}", r.line, r.col))
            elif table[ref.functor] != ref.arity:
                diags.append(Diagnostic("error", f"arity conflict for {kind} {ref.functor}: declared "
                                                 f"{table[ref.functor]}, used with {ref.arity}", r.line, r.col))
    for r in model.initially:
        if isinstance(r.fluent, Struct) and r.fluent.functor not in fl_arity:
            key = ("fluent", r.fluent.functor, r.rid)
            if key not in reported:
                diags.append(Diagnostic("error", f"undeclared fluent {r.fluent.functor}", r.line, r.col))
    for r in model.trajectories:
        if not model.is_functional(r.fluent.functor):
            diags.append(Diagnostic("error", f"trajectory fluent {format_term(r.fluent)} must be functional "
                                             f"(one value argument)", r.line, r.col))
        if model.is_functional(r.state.functor):
            diags.append(Diagnostic("error", f"trajectory state {r.state.functor} must be a boolean fluent",
                                    r.line, r.col))
        if not isinstance(r.t1, Var) or not isinstance(r.t2, Var) or r.t1 is r.t2:
            diags.append(Diagnostic("error", "trajectory time arguments must be two distinct variables",
                                    r.line, r.col))
    for r in model.all_rules():
        head = _head_term(r)
        body_vars = set()
        for lit in r.body:
            body_vars |= literal_vars(lit)
        missing = term_vars(head) - body_vars - _time_vars(r)
        if missing:
            for v in sorted(missing, key=lambda v: v.id):
                name = r.clause.varnames.get(v, repr(v))
                if name.startswith("_"):
                    continue
                diags.append(Diagnostic("error", f"head variable {name} does not occur in the body",
                                        r.line, r.col))
        params = parameter_vars(r.body)
        for lit, (line, col) in zip(r.body, r.clause.body_pos):
            if isinstance(lit, Constraint):
                for side in (lit.lhs, lit.rhs):
                    for bad in nonlinear_terms(side, params):
                        diags.append(Diagnostic("error", f"non-linear expression {format_term(bad, r.clause.varnames)}",
                                                line, col))
        for lit, (line, col) in zip(r.body, r.clause.body_pos):
            if isinstance(lit, UserLit) and lit.atom.key not in model.user_by_key:
                diags.append(Diagnostic("warning", f"predicate {lit.atom.functor}/{lit.atom.arity} has no "
                                                   f"clauses; calls to it fail", line, col))
            if isinstance(lit, Not) and isinstance(lit.inner, UserLit) and lit.inner.atom.key not in model.user_by_key:
                diags.append(Diagnostic("warning", f"negated predicate {lit.inner.atom.functor}/"
                                                   f"{lit.inner.atom.arity} has no clauses", line, col))
    try:
        stratification_check(model)
    except NonStratifiedError as exc:
        diags.append(Diagnostic("error", str(exc)))
    diags.sort(key=lambda d: (d.line, d.col, d.message))
    return diags


# -- stratification ---------------------------------------------------------


class NonStratifiedError(Exception):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__(f"negation cycle through {', '.join(self.cycle)} is not stratified")


def dependency_graph(model: DomainModel) -> nx.DiGraph:
    g = nx.DiGraph()
    for r in model.user:
        head = f"{r.head.functor}/{r.head.arity}"
        g.add_node(head)
        for lit in r.body:
            neg = isinstance(lit, Not)
            inner = lit.inner if neg else lit
            if isinstance(inner, UserLit):
                dep = f"{inner.atom.functor}/{inner.atom.arity}"
                if g.has_edge(head, dep):
                    g[head][dep]["negative"] |= neg
                else:
                    g.add_edge(head, dep, negative=neg)
    return g


def stratification_check(model: DomainModel) -> bool:
    """True when no dependency cycle passes through a negated edge."""
    g = dependency_graph(model)
    for comp in nx.strongly_connected_components(g):
        sub = g.subgraph(comp)
        if not any(d["negative"] for _, _, d in sub.edges(data=True)):
            continue
        for cycle in nx.simple_cycles(sub):
            edges = zip(cycle, cycle[1:] + cycle[:1])
            if any(sub[a][b]["negative"] for a, b in edges):
                names = sorted(n.split("/")[0] for n in cycle)
                raise NonStratifiedError(names)
    return True
