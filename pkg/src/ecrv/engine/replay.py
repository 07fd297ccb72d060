"""Independent re-checking of proof trees.

Structural steps (narrative facts, rule ids, constraint leaves) are checked
against the timeline, the model and the answer's constraint store.  Steps
that depend on the whole history (``holds``, ``value``, ``not`` and the
clipping side conditions) are re-derived with a fresh engine that uses no
memo tables and no checkpoints.
"""

from __future__ import annotations

from ..clpq import ConstraintStore, LinConstraint
from ..model import EffectRule, InitiallyRule, TrajectoryRule, TriggerRule, UserClause, classify_literal
from ..syntax import format_term
from ..terms import Lin, Var, rename
from .core import _MISSING, Engine, unify
from .proof import ProofNode
from .timeline import Timeline


def _covered(st: ConstraintStore, sol: ConstraintStore) -> bool:
    return all(st.entails(c) for c in sol.constraints())


class Replayer:
    def __init__(self, tl: Timeline, store: ConstraintStore | None = None):
        self.tl = tl
        self.store = store if store is not None else tl.ctx.store
        self.fresh = Engine(tl, tabling=False, checkpoints=False)
        self.failures: list[str] = []

    def fail(self, node: ProofNode, why: str) -> bool:
        self.failures.append(f"{node.kind} {format_term(node.goal) if not isinstance(node.goal, LinConstraint) else node.goal.to_dsl()}: {why}")
        return False

    def check(self, node: ProofNode) -> bool:
        name = "_fact" if node.kind == "rule" else "_" + node.kind
        ok = getattr(self, name, self._unknown)(node)
        for c in node.children:
            ok = self.check(c) and ok
        return ok

    def _unknown(self, node):
        return self.fail(node, f"unknown proof step kind {node.kind!r}")

    def _rule(self, node, kinds):
        r = self.tl.model.rule(node.rule) if node.rule else None
        if r is None or not isinstance(r, kinds):
            return None
        return r

    # -- leaves -------------------------------------------------------------

    def _happens(self, node):
        E, t = node.goal.args
        t = self._fix(t)
        if t is None or not self.tl.has_event(E, t):
            return self.fail(node, "no such occurrence on the timeline")
        return True

    def _triggered(self, node):
        return self._happens(node)

    def _trigger(self, node):
        if self._rule(node, TriggerRule) is None:
            return self.fail(node, "not a trigger rule")
        return True

    def _fix(self, t):
        if isinstance(t, (Var, Lin)):
            v = self.store.value_of(t)
            if v is not None:
                return v
            e = self.store.resolve(t)
            return e
        return t

    def _constraint(self, node):
        c = node.goal
        if c.is_const():
            return True if c.truth() else self.fail(node, "constraint is false")
        if self.store.entails(c):
            return True
        return self.fail(node, "constraint not entailed by the answer")

    def _unify(self, node):
        return True

    def _fact(self, node):
        r = self._rule(node, UserClause)
        if r is None or unify(rename(r.head, {}), node.goal, {}, self.store) is None:
            return self.fail(node, "no matching clause")
        return True

    def _initially(self, node):
        r = self._rule(node, InitiallyRule)
        if r is None or unify(rename(r.fluent, {}), node.goal.args[0], {}, self.store) is None:
            return self.fail(node, "no matching initiallyP rule")
        return True

    def _effect(self, node):
        r = self._rule(node, EffectRule)
        if r is None or r.kind != node.goal.functor:
            return self.fail(node, "no matching effect rule")
        return True

    def _trajectory(self, node):
        if self._rule(node, TrajectoryRule) is None:
            return self.fail(node, "no matching trajectory rule")
        return True

    def _snapshot(self, node):
        return True

    # -- re-derived steps -------------------------------------------------------

    def _resolve_goal(self, node) -> bool:
        lit = classify_literal(node.goal)
        for _, sol, _ in self.fresh.solve_lit(lit, {}, self.store, 0):
            if _covered(self.store, sol):
                return True
        return self.fail(node, "could not be re-derived")

    _holds = _value = _not = _resolve_goal

    def _not_holds(self, node):
        lit = classify_literal(node.goal)
        if any(True for _ in self.fresh.solve_lit(lit, {}, self.store, 0)):
            return self.fail(node, "fluent holds after all")
        return True

    def _between(self, lo, hi, lo_closed: bool):
        """Boundary indices that may lie strictly inside ``(lo, hi)`` for some answer point."""
        out = []
        for j, b in enumerate(self.tl.times):
            first = LinConstraint.make(lo, "<=" if lo_closed else "<", b)
            st = self.store.add_all([first, LinConstraint.make(b, "<", hi)])
            if st is not None:
                out.append(j)
        return out

    def _not_clipped(self, node):
        _, F, t = node.goal.args
        lo = node.info.get("from", 0)
        for j in self._between(lo, t, bool(node.info.get("from_closed", False))):
            eff = self.fresh.effects_at(F, j)
            if eff is not None and not eff.value:
                return self.fail(node, f"clipped at {self.tl.times[j]}")
        return True

    def _unchanged(self, node):
        _, Nv, t = node.goal.args
        lo = node.info.get("from", 0)
        name = Nv.functor
        for j in self._between(lo, t, bool(node.info.get("from_closed", False))):
            if self.fresh._setters(name, j) is not _MISSING:
                return self.fail(node, f"value changed at {self.tl.times[j]}")
        return True


def replay(tl: Timeline, proof, store: ConstraintStore | None = None) -> list[str]:
    """Re-check a proof (node or list of nodes); returns failures, empty when valid."""
    r = Replayer(tl, store)
    nodes = proof if isinstance(proof, list) else [proof]
    for n in nodes:
        r.check(n)
    return r.failures


def replay_answer(tl: Timeline, answer) -> list[str]:
    return replay(tl, answer.proof, answer.store)
