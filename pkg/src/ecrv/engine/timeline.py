"""Event timelines split into segments.

Boundaries are the distinct event times ``b0 = 0 < b1 < ... < b(n-1)``.
Segment ``-1`` is the instant ``{0}``; segment ``k`` is ``(b_k, b_(k+1)]``
with ``b_n`` the horizon.  Events at ``b_k`` take effect from segment ``k``
on, so the truth of a fluent at the instant ``b_k`` is its truth on segment
``k - 1``: a fluent is false at the instant it is initiated and still true at
the instant it is terminated.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction

from ..model import DomainModel, Narrative, Occurrence
from ..syntax import format_term
from ..terms import Lin, format_lin
from .timectx import TimeCtx, is_concrete


@dataclass(eq=False)
class TimedEvent:
    """An occurrence on a timeline; triggered ones keep their derivation."""

    event: object
    time: object  # Fraction, or Lin over abduced time variables
    source: str = "narrative"  # narrative | triggered | hypothesis
    rule: str | None = None
    proof: object = None
    seq: int = 0

    def __str__(self) -> str:
        t = format_lin(self.time) if isinstance(self.time, Lin) else format_term(self.time)
        return f"{format_term(self.event)}@{t}"

    def as_occurrence(self) -> Occurrence:
        return Occurrence(self.event, self.time)


@dataclass(eq=False)
class Timeline:
    model: DomainModel
    horizon: Fraction
    ctx: TimeCtx = field(default_factory=TimeCtx)
    clip: str = "open"  # "closed" is a deliberately wrong variant used for mutation tests
    times: list = field(default_factory=lambda: [Fraction(0)])
    at: list = field(default_factory=lambda: [[]])
    closed: bool = False
    checkpoints: list | None = None
    _seq: int = 0

    @classmethod
    def from_narrative(cls, model: DomainModel, narrative: Narrative, ctx: TimeCtx | None = None,
                       clip: str = "open") -> "Timeline":
        tl = cls(model, Fraction(narrative.horizon), ctx or TimeCtx(), clip)
        for o in narrative.occurrences:
            tl.insert(TimedEvent(o.event, Fraction(o.time)))
        return tl

    # -- structure --------------------------------------------------------

    @property
    def concrete(self) -> bool:
        return not self.ctx.symbolic

    @property
    def n(self) -> int:
        return len(self.times)

    def events(self) -> list[TimedEvent]:
        return [e for group in self.at for e in group]

    def seg_start(self, k: int):
        return self.times[k] if k >= 0 else Fraction(0)

    def seg_end(self, k: int):
        if k < 0:
            return Fraction(0)
        return self.times[k + 1] if k + 1 < self.n else self.horizon

    def seg_nonempty(self, k: int) -> bool:
        if k < 0:
            return self.clip == "open"
        return self.ctx.lt(self.seg_start(k), self.seg_end(k)) or (
            self.clip == "closed" and k == self.n - 1)

    def seg_label(self, k: int) -> str:
        if k < 0:
            return "{0}"
        lo, hi = self.seg_start(k), self.seg_end(k)
        f = lambda t: format_lin(t) if isinstance(t, Lin) else format_term(t)
        if self.clip == "closed":
            close = "]" if k == self.n - 1 else ")"
            return f"[{f(lo)}, {f(hi)}{close}"
        return f"({f(lo)}, {f(hi)}]"

    def boundary_index(self, t) -> int | None:
        """Index of the boundary equal to ``t`` (symbolically identical or decided equal)."""
        if self.concrete and is_concrete(t):
            i = bisect.bisect_left(self.times, t)
            return i if i < self.n and self.times[i] == t else None
        for i, b in enumerate(self.times):
            if Lin.of(b) == Lin.of(t):
                return i
        for i, b in enumerate(self.times):
            if self.ctx.eq(b, t):
                return i
        return None

    def seg_of_instant(self, t, closed: bool | None = None) -> int:
        """Segment whose truth applies at the instant ``t`` (``0 <= t <= horizon``)."""
        if closed if closed is not None else self.clip == "closed":
            if self.concrete and is_concrete(t):
                return bisect.bisect_right(self.times, t) - 1
            k = -1
            for i, b in enumerate(self.times):
                if self.ctx.le(b, t):
                    k = i
            return k
        if self.concrete and is_concrete(t):
            if t == 0:
                return -1
            return bisect.bisect_left(self.times, t) - 1
        if self.ctx.eq(t, 0):
            return -1
        k = -1
        for i, b in enumerate(self.times):
            if self.ctx.lt(b, t):
                k = i
        return k

    def seg_range(self, lo, hi) -> range:
        """Segments that may contain instants in ``[lo, hi]`` (concrete timelines)."""
        if lo is None or lo <= 0:
            first = -1
        else:
            first = self.seg_of_instant(min(lo, self.horizon))
        last = self.n - 1 if hi is None or hi >= self.horizon else self.seg_of_instant(max(hi, Fraction(0)))
        return range(first, max(first, last) + 1)

    def seg_constraints(self, k: int, tv):
        """Linear constraints placing the time expression ``tv`` inside segment ``k``."""
        from ..clpq import LinConstraint
        if self.clip == "closed":
            if k < 0:
                return None
            lo, hi = self.seg_start(k), self.seg_end(k)
            upper = "<=" if k == self.n - 1 else "<"
            return [LinConstraint.make(lo, "<=", tv), LinConstraint.make(tv, upper, hi)]
        if k < 0:
            return [LinConstraint.make(tv, "=", 0)]
        return [LinConstraint.make(self.seg_start(k), "<", tv), LinConstraint.make(tv, "<=", self.seg_end(k))]

    def run_constraints(self, k1: int, k2: int, tv):
        """Constraints for ``tv`` in the union of segments ``k1..k2``."""
        from ..clpq import LinConstraint
        if self.clip == "closed":
            lo = self.seg_start(max(k1, 0))
            hi = self.seg_end(k2)
            upper = "<=" if k2 == self.n - 1 else "<"
            return [LinConstraint.make(lo, "<=", tv), LinConstraint.make(tv, upper, hi)]
        if k1 < 0:
            lower = LinConstraint.make(0, "<=", tv)
        else:
            lower = LinConstraint.make(self.seg_start(k1), "<", tv)
        if k2 < 0:
            return [LinConstraint.make(tv, "=", 0)]
        return [lower, LinConstraint.make(tv, "<=", self.seg_end(k2))]

    # -- mutation -----------------------------------------------------------

    def insert(self, ev: TimedEvent) -> int:
        """Add an occurrence; returns its boundary index."""
        self._seq += 1
        ev.seq = self._seq
        t = ev.time
        if self.concrete and is_concrete(t):
            i = bisect.bisect_left(self.times, t)
            if i < self.n and self.times[i] == t:
                self.at[i].append(ev)
                return i
            self.times.insert(i, t)
            self.at.insert(i, [ev])
            return i
        for i, b in enumerate(self.times):
            if self.ctx.eq(b, t):
                self.at[i].append(ev)
                return i
            if self.ctx.lt(t, b):
                self.times.insert(i, t)
                self.at.insert(i, [ev])
                return i
        self.times.append(t)
        self.at.append([ev])
        return self.n - 1

    def has_event(self, event, t) -> bool:
        i = self.boundary_index(t)
        return i is not None and any(e.event == event for e in self.at[i])

    def copy(self) -> "Timeline":
        tl = Timeline(self.model, self.horizon, self.ctx, self.clip, list(self.times),
                      [list(g) for g in self.at], self.closed, None, self._seq)
        return tl

    def to_narrative(self) -> Narrative:
        return Narrative(tuple(e.as_occurrence() for e in self.events()), self.horizon)
