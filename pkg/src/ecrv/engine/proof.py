"""Proof trees: construction helpers, JSON/text rendering and replay."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

from ..clpq import LinConstraint
from ..syntax import format_term
from ..terms import Lin, Struct, Var, format_lin, format_number


@dataclass(eq=False)
class ProofNode:
    """One derivation step.

    ``kind`` names the step (``happens``, ``triggered``, ``holds``, ``value``,
    ``initially``, ``fact``, ``constraint``, ``not``, ``not_clipped``, ...);
    ``rule`` is a clause id (``initiates@3:1``) or an axiom name; ``goal`` is
    the concluded goal instance as a term.
    """

    kind: str
    goal: object
    rule: str | None = None
    children: list = field(default_factory=list)
    info: dict = field(default_factory=dict)
    ground: bool = field(default=False, repr=False)  # no variables anywhere below: safe to share

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def size(self) -> int:
        return sum(1 for _ in self.walk())


def render_value(v, names=None) -> str:
    if isinstance(v, Lin):
        return format_lin(v, names) if v.coeffs else format_number(v.const)
    if isinstance(v, LinConstraint):
        return v.to_dsl(names)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(render_value(x, names) for x in v) + "]"
    if isinstance(v, (Fraction, int, Struct, Var)):
        return format_term(v, names)
    return str(v)


def node_to_dict(node: ProofNode, names=None) -> dict:
    out = {"kind": node.kind, "goal": render_value(node.goal, names)}
    if node.rule:
        out["rule"] = node.rule
    if node.info:
        out["info"] = {k: render_value(v, names) for k, v in sorted(node.info.items())}
    if node.children:
        out["children"] = [node_to_dict(c, names) for c in node.children]
    return out


def proof_to_json(nodes, names=None) -> str:
    return json.dumps([node_to_dict(n, names) for n in nodes], indent=2)


def render_text(nodes, names=None, indent: str = "  ") -> str:
    """Indented human-readable form of a proof (list of nodes or node dicts)."""
    lines: list[str] = []

    def emit(d: dict, depth: int):
        rule = f"  [{d['rule']}]" if d.get("rule") else ""
        info = d.get("info") or {}
        extra = ""
        if info:
            extra = "  {" + ", ".join(f"{k}: {v}" for k, v in info.items()) + "}"
        lines.append(f"{indent * depth}{d['kind']}: {d['goal']}{rule}{extra}")
        for c in d.get("children", []):
            emit(c, depth + 1)

    for n in nodes:
        emit(n if isinstance(n, dict) else node_to_dict(n, names), 0)
    return "\n".join(lines)
