"""Acceptance criteria 1-10; a PASS/FAIL line per criterion is printed after the run."""

from __future__ import annotations

import random
import time
from fractions import Fraction

import pytest

from ecrv.abduce import AbducibleSpec, abduce_events, abduce_parameters
from ecrv.cli import main
from ecrv.clpq import ConstraintStore, LinConstraint
from ecrv.engine import (Stats, ZenoError, checkpoint, holds_at, query, trigger_closure, value_at)
from ecrv.engine.replay import replay, replay_answer
from ecrv.model import has_errors, parse_domain, parse_narrative, validate_model
from ecrv.oracle import check_model
from ecrv.validate import Overdose, RawGoal, check_property, check_scenario, load_scenario

from conftest import CORPUS, CORPUS_RUNS, Q, corpus_proofs, corpus_text, load, narrative


def test_criterion_01_parser_fidelity():
    text = corpus_text("pca_listing.ec")
    t0 = time.perf_counter()
    model = parse_domain(text)
    diags = validate_model(model)
    elapsed = time.perf_counter() - t0
    assert not has_errors(diags)
    assert parse_domain(model.to_text()).equivalent(model)
    assert elapsed < 0.1


def test_criterion_02_trigger_chain(pca, n1):
    t0 = time.perf_counter()
    tl = trigger_closure(pca, n1)
    done = [a.bindings["T"] for a in query(tl, "happens(patient_bolus_completed, T)")]
    stop = [a.bindings["T"] for a in query(tl, "happens(patient_bolus_delivery_stopped, T)")]
    elapsed = time.perf_counter() - t0
    assert done == [Fraction(7)] and stop == [Fraction(7)]
    assert type(done[0]) is Fraction
    assert holds_at(tl, "patient_bolus_delivery_enabled", 7)[0]
    assert not holds_at(tl, "patient_bolus_delivery_enabled", Q("7001/1000"))[0]
    assert elapsed < 1.0


def test_criterion_03_trajectory_values(pca, n1):
    tl = trigger_closure(pca, n1)
    rng = random.Random(3)
    inside = [Q("2001/1000"), Q(3), Q("7/2"), Q("13/3"), Q(7)] + [2 + Fraction(rng.randint(1, 5000), 1000) for _ in range(20)]
    after = [Q("7001/1000"), Q(8), Q("26/3"), Q(10)] + [7 + Fraction(rng.randint(1, 3000), 1000) for _ in range(20)]
    for t in inside:
        assert value_at(tl, "total_drug_delivered", t)[0] == 0 + (t - 2) * 5
    for t in after:
        assert value_at(tl, "total_drug_delivered", t)[0] == 25


def test_criterion_04_consistency_method(pca):
    good = check_scenario(pca, load_scenario(CORPUS / "sunny_day.scn"))
    bad = check_scenario(pca, load_scenario(CORPUS / "seeded_bad.scn"))
    assert good.verdict == "consistent"
    assert bad.verdict == "inconsistent"
    (failing,) = bad.failed
    assert "total_drug_delivered(24)" in failing.goal and "at 8" == failing.when
    assert "actual value 25" in failing.explanation


def test_criterion_05_oracle_equivalence():
    for mname, nname in CORPUS_RUNS:
        for dt in (Q(1), Q("1/2"), Q("1/4")):
            _, diffs = check_model(load(mname), narrative(nname), dt)
            assert diffs == [], (mname, nname, dt, [str(d) for d in diffs])
    # on [0, 10] the toggle has no finite closure; both sides must refuse it
    # check_model simulates first, so this exercises the oracle; the engine side is criterion 8
    with pytest.raises(ZenoError):
        check_model(load("toggle.ec"), narrative("toggle.nrt"), Q(1), zeno_bound=60)


def test_criterion_06_overdose_property(pca, n1):
    tl = trigger_closure(pca, n1)
    r9 = check_property(pca, n1, Overdose(9, 2), timeline=tl)
    assert r9.verdict == "violation"
    t1, t2 = Q(r9.witness["T1"]), Q(r9.witness["T2"])
    delivered = value_at(tl, "total_drug_delivered", t2)[0] - value_at(tl, "total_drug_delivered", t1)[0]
    assert 0 < t2 - t1 <= 2 and delivered > 9
    assert check_property(pca, n1, Overdose(10, 2), timeline=tl).verdict == "pass"
    (region,) = abduce_parameters(pca, n1, Overdose(0, 0).goal("M", "W"), ["M"], fixed={"W": 2}, timeline=tl)
    (c,) = region.constraints
    (m,) = c.vars()
    got = ConstraintStore().add(c)
    want = LinConstraint.make(m, "<", 10)
    assert got.entails(want) and ConstraintStore().add(want).entails(c)


def test_criterion_07_abduction_soundness(pca):
    goal = "happens(patient_bolus_completed, T), T #=< 9"
    spec = AbducibleSpec.parse("patient_bolus_delivery_started in [0, 10] max 1")
    (sol,) = list(abduce_events(pca, narrative("empty.nrt"), goal, [spec]))
    assert sol.region_text() == ["0 #=< Ts", "Ts #=< 4"]
    points = sol.sample_points(20, random.Random(7))
    assert len(points) == 20
    for pt in points:
        tl = trigger_closure(pca, sol.instantiate(pt))
        assert list(query(tl, goal)), pt


def test_criterion_08_non_termination_guards(capsys):
    t0 = time.perf_counter()
    with pytest.raises(ZenoError):
        trigger_closure(load("toggle.ec"), narrative("toggle.nrt"), zeno_bound=1000)
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    code = main(["abduce", str(CORPUS / "pca_bolus.ec"), str(CORPUS / "empty.nrt"),
                 "--goal", "happens(patient_bolus_completed, T)",
                 "--abducible", "patient_bolus_delivery_started in [0, inf] max 1"])
    capsys.readouterr()
    print(f"\nzeno guard tripped after {elapsed:.2f} s; unbounded window exit code {code}")
    assert code == 2


def _boundary_expansions(model, k, use_checkpoints):
    text = "".join(f"happens(patient_bolus_delivery_started, {7 * i + 1}).\n" for i in range(k))
    n = parse_narrative(text + f"horizon({7 * k + 1}).")
    tl = trigger_closure(model, n)
    if use_checkpoints:
        checkpoint(tl)
    s = Stats()
    for occ in n.occurrences:
        t = occ.time
        holds_at(tl, "patient_bolus_delivery_enabled", t, stats=s, use_checkpoints=use_checkpoints)
        value_at(tl, "total_drug_delivered", t, stats=s, use_checkpoints=use_checkpoints)
        list(query(tl, f"holdsAt(total_drug_delivered(V), {t})", stats=s, use_checkpoints=use_checkpoints))
    return s.expansions


def test_criterion_09_performance_properties(pca):
    sc = load_scenario(CORPUS / "sunny_day.scn")
    on, off = Stats(), Stats()
    assert check_scenario(pca, sc, stats=on, tabling=True).verdict == "consistent"
    assert check_scenario(pca, sc, stats=off, tabling=False).verdict == "consistent"
    print(f"\ncache on: {on.expansions} expansions, cache off: {off.expansions}")
    assert on.expansions <= 0.5 * off.expansions
    ks = (4, 6, 8)
    with_cp = {k: _boundary_expansions(pca, k, True) for k in ks}
    without = {k: _boundary_expansions(pca, k, False) for k in ks}
    print(f"checkpointed: {with_cp}, full history: {without}")
    c = max(with_cp[k] / k ** 1.5 for k in ks)
    assert all(with_cp[k] <= c * k ** 1.5 for k in ks)
    assert with_cp[8] / with_cp[4] <= 2 ** 1.5
    # without checkpoints the cost per query grows with the history behind it
    assert without[8] / without[4] > 2 and without[8] / without[6] > 8 / 6


def test_criterion_10_proof_replay(pca, n1):
    total, bad = 0, []
    for label, tl, item in corpus_proofs():
        total += 1
        failures = replay(tl, *item) if isinstance(item, tuple) else replay_answer(tl, item)
        if failures:
            bad.append(label)
    tl = trigger_closure(pca, n1)
    w = check_property(pca, n1, RawGoal("holdsAt(total_drug_delivered(V), T), V #> 24"), timeline=tl)
    assert w.verdict == "violation"
    for a in query(tl, "holdsAt(total_drug_delivered(V), T), V #> 24"):
        total += 1
        if replay_answer(tl, a):
            bad.append("raw goal witness")
    print(f"\nreplayed {total} proof trees, {len(bad)} failed")
    assert total > 100 and bad == []
