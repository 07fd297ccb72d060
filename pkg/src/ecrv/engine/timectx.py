"""Comparisons between (possibly symbolic) timepoints.

Concrete timelines only hold ``Fraction`` times and every comparison is
direct.  During abduction, hypothesised event times are variables bounded by
a base constraint store; when the store does not decide a comparison the
context raises :class:`Split` and :func:`explore` re-runs the computation
once per case.
"""

from __future__ import annotations

import logging
from fractions import Fraction

from ..clpq import ConstraintStore, LinConstraint
from ..terms import Lin
from .errors import Split

log = logging.getLogger(__name__)


def is_concrete(t) -> bool:
    return type(t) is Fraction or type(t) is int


class TimeCtx:
    def __init__(self, store: ConstraintStore | None = None, hyp_vars=()):
        self.store = store if store is not None else ConstraintStore()
        self.hyp_vars = tuple(hyp_vars)

    @property
    def symbolic(self) -> bool:
        return bool(self.hyp_vars)

    def decide(self, c: LinConstraint) -> bool:
        if c.is_const():
            return c.truth()
        if self.store.entails(c):
            return True
        if self.store.add(c) is None:
            return False
        raise Split(c)

    def lt(self, a, b) -> bool:
        if is_concrete(a) and is_concrete(b):
            return a < b
        return self.decide(LinConstraint.make(a, "<", b))

    def le(self, a, b) -> bool:
        if is_concrete(a) and is_concrete(b):
            return a <= b
        return self.decide(LinConstraint.make(a, "<=", b))

    def eq(self, a, b) -> bool:
        if is_concrete(a) and is_concrete(b):
            return a == b
        return self.le(a, b) and self.le(b, a)

    def require(self, store: ConstraintStore) -> None:
        """Make sure ``store`` adds nothing about the abduced times (else split)."""
        if not self.hyp_vars or not store.vars() & set(self.hyp_vars):
            return
        for c in store.project(self.hyp_vars):
            if not self.store.entails(c):
                raise Split(c)


def explore(base: ConstraintStore, hyp_vars, fn, *, max_branches: int = 512):
    """Run ``fn(ctx)`` on every case of the base store that it needs split.

    Returns a list of ``(store, result)`` in a deterministic order.
    """
    out = []
    pending = [base]
    runs = 0
    while pending:
        store = pending.pop(0)
        runs += 1
        if runs > max_branches:
            raise RuntimeError(f"more than {max_branches} timeline orderings explored")
        try:
            out.append((store, fn(TimeCtx(store, hyp_vars))))
        except Split as sp:
            cases = [sp.constraint] + sp.constraint.negation()
            for c in cases:
                nxt = store.add(c)
                if nxt is not None:
                    pending.append(nxt)
            log.debug("split on %s", sp.constraint)
    return out


def as_lin(t) -> Lin:
    return Lin.of(t)
