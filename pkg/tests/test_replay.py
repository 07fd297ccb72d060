from __future__ import annotations

import copy

import pytest

from ecrv.engine import holds_at, query, value_at
from ecrv.engine.replay import replay, replay_answer
from ecrv.terms import Struct

from conftest import Q, corpus_proofs


def _check(tl, item):
    if isinstance(item, tuple):
        proof, store = item
        return replay(tl, proof, store)
    return replay_answer(tl, item)


def test_every_corpus_proof_replays():
    total, bad = 0, []
    for label, tl, item in corpus_proofs():
        total += 1
        failures = _check(tl, item)
        if failures:
            bad.append((label, failures))
    assert total > 100
    assert bad == []


def _first(node, kind):
    return next(n for n in node.walk() if n.kind == kind)


def test_moved_narrative_event_is_caught(tl_n1):
    _, proof = value_at(tl_n1, "total_drug_delivered", 9)
    forged = copy.deepcopy(proof)
    h = _first(forged, "happens")
    E, _ = h.goal.args
    h.goal = Struct("happens", (E, Q(3)))
    assert replay(tl_n1, proof) == []
    assert any("no such occurrence" in f for f in replay(tl_n1, forged))


def test_wrong_value_claim_is_caught(tl_n1):
    (a,) = list(query(tl_n1, "holdsAt(total_drug_delivered(V), 9)"))
    forged = copy.deepcopy(a.proof)
    node = forged[0]
    F, t = node.goal.args
    node.goal = Struct("holdsAt", (Struct(F.functor, (Q(24),)), t))
    assert replay(tl_n1, a.proof, a.store) == []
    assert replay(tl_n1, forged, a.store)


def test_false_holds_claim_is_caught(tl_n1):
    ok, proof = holds_at(tl_n1, "patient_bolus_delivery_enabled", 5)
    assert ok
    forged = copy.deepcopy(proof)
    forged.goal = Struct("holdsAt", (forged.goal.args[0], Q(8)))
    assert replay(tl_n1, forged)


def test_unknown_step_kind_is_rejected(tl_n1):
    _, proof = holds_at(tl_n1, "patient_bolus_delivery_enabled", 5)
    forged = copy.deepcopy(proof)
    forged.children[0].kind = "magic"
    assert any("unknown proof step" in f for f in replay(tl_n1, forged))


@pytest.mark.parametrize("goal", ["happens(patient_bolus_delivery_stopped, T)",
                                  "holdsAt(total_drug_delivered(V), T), V #>= 20, "
                                  "not holdsAt(patient_bolus_delivery_enabled, T)"])
def test_answers_replay_with_their_store(tl_n1, goal):
    for a in query(tl_n1, goal):
        assert replay_answer(tl_n1, a) == []
