"""Chronological fixpoint of the trigger rules."""

from __future__ import annotations

import logging
from fractions import Fraction

from ..clpq import LinConstraint
from ..syntax import format_term
from ..terms import Lin, Var, is_ground, rename
from .core import Engine, finalize, rename_body, resolve
from .errors import ZenoError
from .proof import ProofNode
from .timeline import TimedEvent

log = logging.getLogger(__name__)


def _interval(tv, st, ctx):
    """``(lo, lo_strict, hi, hi_strict)`` of the time expression over ``st``.

    Bounds may be linear in the abduced time variables; the tightest one is
    chosen through the time context (which may split).
    """
    if not isinstance(tv, (Var, Lin)):
        return tv, False, tv, False
    if not ctx.symbolic:
        return st.bounds(tv)
    probe = Var("_probe")
    st2 = st.add(LinConstraint.make(probe, "=", tv))
    lows, highs = [], []
    for c in st2.project([probe, *ctx.hyp_vars]):
        q = c.expr.coef(probe)
        if q == 0:
            continue
        rest = c.expr - Lin({probe: q})
        bound = rest.scale(-1 / q)
        bound = bound.const if not bound.coeffs else bound
        strict = c.op == "<"
        if c.op == "=":
            lows.append((bound, False))
            highs.append((bound, False))
        elif q > 0:
            highs.append((bound, strict))
        else:
            lows.append((bound, strict))
    lo = _extreme(lows, ctx, max_=True)
    hi = _extreme(highs, ctx, max_=False)
    return (lo[0] if lo else None, lo[1] if lo else False, hi[0] if hi else None, hi[1] if hi else False)


def _extreme(bounds, ctx, max_: bool):
    best = None
    for b, strict in bounds:
        if best is None:
            best = (b, strict)
            continue
        if ctx.eq(b, best[0]):
            best = (b, strict or best[1])
        elif ctx.lt(best[0], b) == max_:
            best = (b, strict)
    return best


def _merge(intervals, ctx):
    """Merge touching or overlapping intervals (sorted by lower bound)."""
    out = []
    for iv in intervals:
        lo, lo_s, hi, hi_s, info = iv
        if out:
            plo, plo_s, phi, phi_s, pinfo = out[-1]
            touching = ctx.lt(lo, phi) or (ctx.eq(lo, phi) and not (lo_s and phi_s))
            if touching:
                if ctx.lt(phi, hi) or (ctx.eq(phi, hi) and phi_s and not hi_s):
                    out[-1] = (plo, plo_s, hi, hi_s, pinfo)
                continue
        out.append(iv)
    return out


def candidates(engine: Engine, cursor: int) -> list:
    """Trigger firings with onset at or after boundary ``cursor``.

    Returns ``(onset, rule_order, event, rule, (proofs, bindings))`` tuples;
    proofs are finalised only for the firing that is kept.
    """
    tl, ctx, model = engine.tl, engine.ctx, engine.model
    lower = tl.times[cursor - 1] if cursor > 0 else None
    groups: dict = {}
    for order, rule in enumerate(model.triggers):
        m: dict = {}
        ev = rename(rule.event, m)
        tvar = rename(rule.time, m)
        st = ctx.store
        if isinstance(tvar, Var):
            lo_c = LinConstraint.make(0, "<=", tvar) if lower is None else LinConstraint.make(lower, "<", tvar)
            st = st.add_all([lo_c, LinConstraint.make(tvar, "<=", tl.horizon)])
            if st is None:
                continue
        for s, st2, proofs in engine.solve(rename_body(rule.body, m), {}, st, 1):
            ctx.require(st2)
            E = resolve(ev, s)
            if not is_ground(E):
                log.warning("trigger %s produced non-ground event %s; ignored", rule.rid, format_term(E))
                continue
            tv = engine.time_value(tvar, s)
            lo, lo_s, hi, hi_s = _interval(tv, st2, ctx)
            if lo is None:
                lo, lo_s = Fraction(0), False
            if hi is None:
                hi, hi_s = tl.horizon, False
            groups.setdefault(E, []).append((lo, lo_s, hi, hi_s, (order, rule, proofs, s, tvar)))
    out = []
    start = tl.times[cursor]
    for E, ivs in groups.items():
        ivs = _sort(ivs, ctx)
        for lo, lo_s, hi, hi_s, (order, rule, proofs, s, tvar) in _merge(ivs, ctx):
            if not ctx.le(start, lo) or ctx.lt(tl.horizon, lo):
                continue
            if tl.has_event(E, lo):
                continue
            at = dict(s)
            if isinstance(tvar, Var) and tvar not in s:
                at[tvar] = lo
            out.append((lo, order, E, rule, (proofs, at)))
    return out


def _sort(ivs, ctx):
    import functools

    def cmp(a, b):
        if ctx.eq(a[0], b[0]):
            return (a[1] - b[1]) or (a[4][0] - b[4][0])
        return -1 if ctx.lt(a[0], b[0]) else 1

    return sorted(ivs, key=functools.cmp_to_key(cmp))


def close(engine: Engine, zeno_bound: int = 1000) -> list[TimedEvent]:
    """Add triggered events to ``engine.tl`` until the fixpoint; returns them."""
    tl, ctx = engine.tl, engine.ctx
    added: list[TimedEvent] = []
    cursor = 0
    while True:
        cands = candidates(engine, cursor)
        if not cands:
            break
        if len(added) >= zeno_bound:
            raise ZenoError(zeno_bound, added)
        best = cands[0]
        for c in cands[1:]:
            if ctx.lt(c[0], best[0]) or (ctx.eq(c[0], best[0]) and c[1] < best[1]):
                best = c
        onset, _, E, rule, (raw, at) = best
        proofs = [finalize(p, at) for p in raw]
        goal = ProofNode("trigger", None, rule.rid, proofs)
        te = TimedEvent(E, onset, "triggered", rule.rid, goal)
        goal.goal = te_goal(te)
        j = tl.insert(te)
        engine.invalidate_from(j)
        cursor = j
        added.append(te)
        log.debug("triggered %s", te)
    tl.closed = True
    return added


def te_goal(te: TimedEvent):
    from ..terms import Struct
    return Struct("happens", (te.event, te.time))
