from __future__ import annotations

import warnings
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecrv.engine import Stats, trigger_closure, value_at
from ecrv.validate import (MissingInput, Overdose, RawGoal, ResponseTime, StageOrderWarning, check_property,
                           check_scenario, parse_scenario, staged_run, sweep)

from conftest import CORPUS, Q, load, narrative
from ecrv.validate import load_scenario


def test_sunny_day_is_consistent(pca):
    r = check_scenario(pca, load_scenario(CORPUS / "sunny_day.scn"))
    assert r.verdict == "consistent"
    assert len(r.results) == 5 and all(x.ok for x in r.results)
    assert r.provenance.startswith("patient requests")


def test_seeded_bad_names_the_failing_conjunct(pca):
    r = check_scenario(pca, load_scenario(CORPUS / "seeded_bad.scn"))
    assert r.verdict == "inconsistent"
    (bad,) = r.failed
    assert bad.goal == "holdsAt(total_drug_delivered(24))" and bad.when == "at 8"
    assert "actual value 25" in bad.explanation
    assert "actual value 25" in r.text()


def test_by_postcondition_and_missing_value(pca):
    sc = parse_scenario("happens(patient_bolus_delivery_started, 2). horizon(10).\n"
                        "expect(holdsAt(total_drug_delivered(25)), by(6)).\n"
                        "expect(holdsAt(patient_bolus_drug_delivered(3)), at(1)).\n"
                        "expect(holdsAt(total_drug_delivered(15)), by(6)).\n", "probe")
    r = check_scenario(pca, sc)
    assert [x.ok for x in r.results] == [False, False, True]
    assert "never equals 25 up to 6" in r.results[0].explanation
    assert "no value" in r.results[1].explanation


def test_postcondition_outside_horizon_is_rejected():
    with pytest.raises(ValueError):
        parse_scenario("horizon(5). expect(holdsAt(f), at(6)).")


def test_engine_errors_become_error_reports():
    sc = parse_scenario("happens(switch_on, 0). horizon(10). expect(holdsAt(on), at(1)).")
    r = check_scenario(load("toggle.ec"), sc, zeno_bound=50)
    assert r.verdict == "error" and "ZenoError" in r.explanation


def test_overdose_boundary(pca, n1):
    r9 = check_property(pca, n1, Overdose(9, 2))
    assert r9.verdict == "violation"
    assert r9.witness == {"T1": "2", "T2": "4", "V1": "0", "V2": "10", "delivered": "10"}
    assert check_property(pca, n1, Overdose(10, 2)).verdict == "pass"


def test_overdose_witness_verifies_independently(pca, n1):
    tl = trigger_closure(pca, n1)
    w = check_property(pca, n1, Overdose(9, 2), timeline=tl).witness
    t1, t2 = Q(w["T1"]), Q(w["T2"])
    v1 = value_at(tl, "total_drug_delivered", t1)[0]
    v2 = value_at(tl, "total_drug_delivered", t2)[0]
    assert 0 < t2 - t1 <= 2 and v2 - v1 > 9


def _delivered(t, start):
    # closed form for one bolus from `start`: 5 per minute for 5 minutes
    if t <= start:
        return Fraction(0)
    return Fraction(5) * min(t - start, Fraction(5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10), st.integers(1, 12), st.integers(0, 4))
def test_overdose_matches_brute_force(pca, m, w8, start):
    M, W = Fraction(m), Fraction(w8, 4)
    n = narrative(f"happens(patient_bolus_delivery_started, {start}). horizon(12).")
    grid = [Fraction(i, 8) for i in range(0, 97)]
    best = max(_delivered(b, start) - _delivered(a, start) for a in grid for b in grid if 0 < b - a <= W)
    r = check_property(pca, n, Overdose(M, W))
    assert r.verdict == ("violation" if best > M else "pass")


def test_response_time(pca, n1):
    ok = check_property(pca, n1, ResponseTime("patient_bolus_delivery_started", "patient_bolus_delivery_stopped", 5))
    late = check_property(pca, n1, ResponseTime("patient_bolus_delivery_started", "patient_bolus_delivery_stopped", 4))
    assert ok.verdict == "pass"
    assert late.verdict == "violation" and late.witness["trigger_time"] == "2"


def test_response_deadline_past_horizon_is_not_judged(pca):
    n = narrative("happens(patient_bolus_delivery_started, 8). horizon(10).")
    r = check_property(pca, n, ResponseTime("patient_bolus_delivery_started", "patient_bolus_delivery_stopped", 5))
    assert r.verdict == "pass"


def test_raw_goal_violation_carries_a_proof(pca, n1):
    r = check_property(pca, n1, RawGoal("holdsAt(total_drug_delivered(V), T), V #> 24", "over 24"))
    assert r.verdict == "violation" and r.name == "over 24" and r.witness["proof"]


def test_sweep_counts_and_isolation(pca):
    nars = {f"sunny{i}": narrative(f"sunny_day_{i}.nrt") for i in (1, 2, 3)}
    s = sweep(pca, nars, Overdose(9, 2))
    assert s.counts == {"violation": 3}
    nars["bad"] = narrative("happens(patient_bolus_delivery_started, 0). "
                            "happens(patient_bolus_delivery_started, 5). horizon(10).")
    s = sweep(pca, nars, Overdose(9, 2))
    assert s.counts == {"violation": 3, "error": 1}
    assert "ModelConflict" in s.reports[-1].explanation


def test_sweep_needs_input(pca):
    with pytest.raises(MissingInput):
        sweep(pca, [], Overdose(9, 2))


def test_stats_are_recorded(pca):
    stats = Stats()
    check_scenario(pca, load_scenario(CORPUS / "sunny_day.scn"), stats=stats)
    assert stats.expansions > 0 and stats.hits > 0


def test_staged_run_matches_plain_closure(pca, n1):
    staged = staged_run(pca, n1, [[r] for r in pca.triggers])
    plain = trigger_closure(pca, n1)
    assert [str(e) for e in staged.events()] == [str(e) for e in plain.events()]


def test_staged_run_flags_order_sensitivity():
    m = load("staged.ec")
    b_rule, c_rule = m.triggers
    with pytest.warns(StageOrderWarning):
        staged_run(m, narrative("staged.nrt"), [[b_rule], [c_rule]])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        staged_run(m, narrative("staged.nrt"), [[c_rule], [b_rule]])


def test_staged_run_needs_a_partition(pca, n1):
    with pytest.raises(ValueError):
        staged_run(pca, n1, [[pca.triggers[0]]])


def test_report_json_is_stable(pca):
    sc = load_scenario(CORPUS / "seeded_bad.scn")
    assert check_scenario(pca, sc).to_json() == check_scenario(pca, sc).to_json()
