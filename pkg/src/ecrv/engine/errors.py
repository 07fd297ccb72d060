"""Engine exceptions."""

from __future__ import annotations


class EngineError(Exception):
    """Base class for evaluation errors that are findings about the model."""


class ModelConflict(EngineError):
    """Distinct events at one instant both initiate and terminate a fluent."""

    def __init__(self, fluent, time, initiators, terminators):
        self.fluent = fluent
        self.time = time
        self.initiators = initiators
        self.terminators = terminators
        super().__init__(f"fluent {fluent} is both initiated ({', '.join(initiators)}) and "
                         f"terminated ({', '.join(terminators)}) at {time}")


class ZenoError(EngineError):
    """Trigger closure kept producing events past the configured bound."""

    def __init__(self, bound: int, last_events):
        self.bound = bound
        self.last_events = list(last_events)
        tail = ", ".join(map(str, self.last_events[-5:]))
        super().__init__(f"trigger closure exceeded {bound} added events (possible Zeno behaviour); "
                         f"last: {tail}")


class DepthExceeded(EngineError):
    def __init__(self, bound: int):
        self.bound = bound
        super().__init__(f"goal depth bound {bound} exceeded")


class NoValue(EngineError):
    def __init__(self, fluent, time):
        self.fluent = fluent
        self.time = time
        super().__init__(f"functional fluent {fluent} has no value at {time}")


class MultiValue(EngineError):
    def __init__(self, fluent, where, values):
        self.fluent = fluent
        self.where = where
        self.values = list(values)
        super().__init__(f"functional fluent {fluent} has several values {self.values} {where}")


class CyclicValue(EngineError):
    """A functional fluent's value on a segment depends on itself."""

    def __init__(self, fluent, where):
        self.fluent = fluent
        self.where = where
        super().__init__(f"value of {fluent} {where} depends on itself")


class Floundering(EngineError):
    """Negated goal would bind a non-numeric variable of the enclosing goal."""


class GoalError(ValueError):
    """The query does not fit the model's signature."""


class Split(Exception):
    """A timeline comparison depends on undecided abduced times.

    Carries the constraint to branch on; the branch driver retries once with
    the constraint and once with each disjunct of its negation.
    """

    def __init__(self, constraint):
        self.constraint = constraint
        super().__init__(repr(constraint))
