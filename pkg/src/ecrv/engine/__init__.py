"""Public evaluation API over closed timelines."""

from __future__ import annotations

import logging
import sys
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

from ..clpq import ConstraintStore
from ..model import DomainModel, Holds, Narrative, classify_literal
from ..syntax import format_term, parse_body, parse_term
from ..terms import Lin, Struct, Var, term_vars
from .closure import close
from .core import Engine, Stats, eval_lin, finalize, norm, resolve, walk
from .errors import (CyclicValue, DepthExceeded, EngineError, Floundering, GoalError, ModelConflict, MultiValue,
                     NoValue, ZenoError)
from .proof import ProofNode, node_to_dict, render_value
from .timectx import TimeCtx
from .timeline import TimedEvent, Timeline

log = logging.getLogger(__name__)

DEFAULT_ZENO_BOUND = 1000
DEFAULT_DEPTH = 10000

__all__ = [
    "Answer", "CacheStats", "CyclicValue", "DepthExceeded", "Engine", "EngineError", "Floundering", "GoalError",
    "ModelConflict", "MultiValue", "NoValue", "ProofNode", "Stats", "Timeline", "TimedEvent", "ZenoError",
    "checkpoint", "close_timeline", "holds_at", "query", "solve_with_cache", "trigger_closure", "value_at",
]


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    stored_failures: int = 0

    @classmethod
    def of(cls, stats: Stats) -> "CacheStats":
        return cls(stats.hits, stats.misses, stats.stored_failures)


@dataclass
class Answer:
    bindings: dict  # query variable name -> Fraction | Lin | Struct
    residual: list  # LinConstraint over the query's free variables
    proof: list = field(default_factory=list)
    names: dict = field(default_factory=dict)  # Var -> display name
    store: ConstraintStore | None = None

    def binding_text(self) -> dict:
        return {k: render_value(v, self.names) for k, v in self.bindings.items()}

    def residual_text(self) -> list[str]:
        return [c.to_dsl(self.names) for c in self.residual]

    def key(self) -> tuple:
        return tuple(sorted(self.binding_text().items())), tuple(self.residual_text())

    def to_dict(self, with_proof: bool = True) -> dict:
        out = {"bindings": self.binding_text(), "residual": self.residual_text()}
        if with_proof:
            out["proof"] = [node_to_dict(n, self.names) for n in self.proof]
        return out

    def __str__(self) -> str:
        parts = [f"{k} = {v}" for k, v in self.binding_text().items()]
        parts += self.residual_text()
        return ", ".join(parts) if parts else "true"


_STACK_BYTES = 512 * 1024 * 1024
_deep = threading.local()


def _deep_recursion(fn):
    """Run ``fn`` on a thread with a large stack and a raised recursion limit.

    Overflow becomes DepthExceeded instead of crashing the interpreter.
    Nested calls run inline on the already-deep thread.
    """
    if getattr(_deep, "active", False):
        return fn()
    box: dict = {}

    def run():
        _deep.active = True
        try:
            box["value"] = fn()
        except RecursionError as e:
            box["error"] = DepthExceeded(DEFAULT_DEPTH)
            box["error"].__cause__ = e
        except BaseException as e:  # noqa: BLE001 -- re-raised on the caller's thread
            box["error"] = e

    old_limit = sys.getrecursionlimit()
    old_stack = threading.stack_size()
    sys.setrecursionlimit(max(old_limit, 60000))
    try:
        threading.stack_size(_STACK_BYTES)
        t = threading.Thread(target=run, name="ecrv-eval")
        t.start()
    finally:
        threading.stack_size(old_stack)
    try:
        t.join()
    finally:
        sys.setrecursionlimit(old_limit)
    if "error" in box:
        raise box["error"]
    return box["value"]


def trigger_closure(model: DomainModel, narrative: Narrative, zeno_bound: int = DEFAULT_ZENO_BOUND, *,
                    ctx: TimeCtx | None = None, clip: str = "open", depth_bound: int = DEFAULT_DEPTH,
                    stats: Stats | None = None, tabling: bool = True) -> Timeline:
    """Narrative plus every triggered event, as a closed timeline."""
    return close_timeline(model, narrative, zeno_bound, ctx=ctx, clip=clip, depth_bound=depth_bound,
                          stats=stats, tabling=tabling)[0]


def close_timeline(model: DomainModel, narrative: Narrative, zeno_bound: int = DEFAULT_ZENO_BOUND, *,
                   ctx: TimeCtx | None = None, clip: str = "open", depth_bound: int = DEFAULT_DEPTH,
                   stats: Stats | None = None, tabling: bool = True) -> tuple[Timeline, Engine]:
    """Like :func:`trigger_closure`, also returning the engine that closed it.

    Insertions only invalidate tables from the insertion point on, so the
    engine's memo is valid for the final timeline and later queries can reuse it.
    """
    if zeno_bound < 1:
        raise ValueError("zeno bound must be positive")
    tl = Timeline.from_narrative(model, narrative, ctx, clip)
    eng = Engine(tl, tabling=tabling, checkpoints=False, depth_bound=depth_bound, stats=stats)
    _deep_recursion(lambda: close(eng, zeno_bound))
    return tl, eng


def _fluent(spec) -> Struct:
    if isinstance(spec, Struct):
        return spec
    t = parse_term(spec)
    if not isinstance(t, Struct):
        raise GoalError(f"not a fluent: {spec!r}")
    return t


def _time(t):
    if isinstance(t, str):
        t = parse_term(t)
    if isinstance(t, (int, Fraction)) and not isinstance(t, bool):
        return Fraction(t)
    if isinstance(t, float):
        raise GoalError("time points must be exact rationals, not floats")
    if isinstance(t, (Lin, Var)):
        return norm(Lin.of(t)) if isinstance(t, Lin) else t
    try:
        return norm(eval_lin(t, {}))
    except Exception as e:  # noqa: BLE001
        raise GoalError(f"bad time point {t!r}") from e


def _check_time(tl: Timeline, t) -> None:
    if isinstance(t, Fraction) and not (0 <= t <= tl.horizon):
        raise GoalError(f"time {t} outside [0, {tl.horizon}]")


def _engine(tl, tabling, stats, depth_bound, use_checkpoints=True):
    return Engine(tl, tabling=tabling, checkpoints=use_checkpoints, depth_bound=depth_bound, stats=stats)


def holds_at(tl: Timeline, fluent, t, *, tabling: bool = True, stats: Stats | None = None,
             depth_bound: int = DEFAULT_DEPTH, use_checkpoints: bool = True) -> tuple[bool, ProofNode]:
    """Truth of a ground boolean fluent at time ``t`` with its justification."""
    F = _fluent(fluent)
    info = tl.model.fluents.get(F.functor)
    if info is None:
        raise GoalError(f"undeclared fluent {F.functor}")
    if info.functional:
        raise GoalError(f"{F.functor} is a functional fluent; use value_at")
    t = _time(t)
    _check_time(tl, t)
    eng = _engine(tl, tabling, stats, depth_bound, use_checkpoints)

    def run():
        k = eng.instant_seg(t, boolean=True)
        if k is None:
            k = tl.seg_of_instant(t)
        tr = eng.truth(F, k)
        if tr.value:
            return True, eng.holds_node(F, t, tr, k, k)
        why = "never initiated" if tr.proof is None else "terminated"
        kids = [tr.proof] if tr.proof is not None else []
        return False, ProofNode("not_holds", Struct("holdsAt", (F, t)), why, kids,
                                {"segments": tl.seg_label(k)})

    return _deep_recursion(run)


def value_at(tl: Timeline, fluent, t, *, tabling: bool = True, stats: Stats | None = None,
             depth_bound: int = DEFAULT_DEPTH, use_checkpoints: bool = True) -> tuple[object, ProofNode]:
    """Value of a functional fluent at time ``t``; raises NoValue or MultiValue."""
    name = fluent.functor if isinstance(fluent, Struct) else str(fluent).split("(")[0].strip()
    info = tl.model.fluents.get(name)
    if info is None:
        raise GoalError(f"undeclared fluent {name}")
    if not info.functional:
        raise GoalError(f"{name} is a boolean fluent; use holds_at")
    t = _time(t)
    _check_time(tl, t)
    eng = _engine(tl, tabling, stats, depth_bound, use_checkpoints)

    def run():
        k = eng.instant_seg(t)
        if k is None:
            k = tl.seg_of_instant(t, False)
        v = eng.value(name, k)
        if v is None:
            raise NoValue(name, render_value(t))
        return v.at(t), eng.value_node(name, v, t, k, k)

    return _deep_recursion(run)


def parse_goal(goal):
    """Goal text (or pre-parsed ``(literals, varmap)``) to literals and variable names."""
    if isinstance(goal, tuple):
        return goal
    text = goal.strip()
    if text.endswith("."):
        text = text[:-1]
    try:
        terms, varmap = parse_body(text)
    except Exception as e:
        raise GoalError(str(e)) from e
    return [classify_literal(x) for x in terms], varmap


def _check_goal(model: DomainModel, lits) -> None:
    from ..model import Happens, InitiallyLit, Not

    for lit in lits:
        inner = lit.inner if isinstance(lit, Not) else lit
        if isinstance(inner, (Holds, InitiallyLit)):
            f = inner.fluent
            if isinstance(f, Struct) and f.functor not in model.fluents:
                raise GoalError(f"undeclared fluent {f.functor}")
            if isinstance(f, Struct) and model.fluents[f.functor].arity != f.arity:
                raise GoalError(f"fluent {f.functor} has arity {model.fluents[f.functor].arity}")
        if isinstance(inner, Happens):
            e = inner.event
            if isinstance(e, Struct) and model.events and e.functor not in model.events:
                raise GoalError(f"undeclared event {e.functor}")


def answer_of(s: dict, st: ConstraintStore, varmap: dict, proofs) -> Answer:
    names = {v: n for n, v in varmap.items()}
    bindings: dict = {}
    free: list[Var] = []
    for n, v in varmap.items():
        val = walk(v, s)
        if isinstance(val, Var):
            if st.mentions(val):
                fixed = st.value_of(val)
                if fixed is not None:
                    if not n.startswith("_"):
                        bindings[n] = fixed
                    continue
                e = st.resolve(val)
                if isinstance(e, Lin) and e != Lin.of(val):
                    if not n.startswith("_"):
                        bindings[n] = e
                    free.extend(x for x in e.coeffs if x not in free)
                    continue
            if val not in free:
                free.append(val)
            if val is not v:
                names.setdefault(val, n)
            continue
        r = resolve(val, s)
        if isinstance(r, Lin):
            r = st.resolve(r)
            if isinstance(r, Lin):
                free.extend(x for x in r.coeffs if x not in free)
        elif isinstance(r, Struct):
            for x in term_vars(r):
                if x not in free:
                    free.append(x)
        if not n.startswith("_"):
            bindings[n] = r
    residual = st.project([v for v in free if st.mentions(v)]) if free else []
    return Answer(bindings, residual, [finalize(p, s) for p in proofs], names, st)


def query(tl: Timeline, goal, *, tabling: bool = True, stats: Stats | None = None,
          depth_bound: int = DEFAULT_DEPTH, use_checkpoints: bool = True,
          store: ConstraintStore | None = None, engine: Engine | None = None) -> Iterator[Answer]:
    """Answers of a conjunctive goal over a closed timeline (deduplicated).

    Passing ``engine`` shares its memo tables across several queries.
    """
    lits, varmap = parse_goal(goal)
    _check_goal(tl.model, lits)
    eng = engine or _engine(tl, tabling, stats, depth_bound, use_checkpoints)
    base = store if store is not None else tl.ctx.store

    def run():
        seen = set()
        out = []
        for s, st, proofs in eng.solve(tuple(lits), {}, base, 0):
            a = answer_of(s, st, varmap, proofs)
            k = a.key()
            if k in seen:
                continue
            seen.add(k)
            out.append(a)
        return out

    yield from _deep_recursion(run)


def solve_with_cache(tl: Timeline, goal, cache: bool = True, **kw) -> tuple[list[Answer], CacheStats]:
    """Like :func:`query`, returning the memoisation counters as well."""
    stats = Stats()
    answers = list(query(tl, goal, tabling=cache, stats=stats, **kw))
    return answers, CacheStats.of(stats) if cache else CacheStats()


def checkpoint(tl: Timeline, *, depth_bound: int = DEFAULT_DEPTH) -> Timeline:
    """Store every fluent's outcome on each segment so later lookups skip the history."""
    eng = Engine(tl, tabling=True, checkpoints=False, depth_bound=depth_bound)

    def run():
        for k in range(-1, tl.n):
            if not tl.seg_nonempty(k):
                continue
            for name, info in tl.model.fluents.items():
                if info.functional:
                    eng.value(name, k)
                else:
                    for F in eng.instances(name):
                        eng.truth(F, k)

    _deep_recursion(run)
    keep = ("T", "V", "I", "E")
    tl.checkpoints = [{key: v for key, v in d.items() if key[0] in keep} for d in eng.seg_cache]
    while len(tl.checkpoints) < tl.n + 1:
        tl.checkpoints.append({})
    return tl


def checkpoint_table(tl: Timeline) -> list[dict]:
    """Per boundary: fluent text -> truth or value just after it (for reports and tests)."""
    if tl.checkpoints is None:
        checkpoint(tl)
    rows = []
    for i, t in enumerate(tl.times):
        d = tl.checkpoints[i + 1] if i + 1 < len(tl.checkpoints) else {}
        row = {}
        for key, v in d.items():
            if key[0] == "T":
                row[format_term(key[1])] = v.value
            elif key[0] == "V":
                row[key[1]] = None if v is None else v.expr
        rows.append({"time": t, "fluents": dict(sorted(row.items()))})
    return rows
