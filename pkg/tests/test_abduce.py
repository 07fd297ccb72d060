from __future__ import annotations

import random

import pytest

from ecrv.abduce import (UNSAT, AbducibleSpec, SearchExhausted, UnboundedWindow, abduce_events, abduce_parameters,
                         refine)
from ecrv.clpq import ConstraintStore, LinConstraint
from ecrv.engine import query, trigger_closure
from ecrv.validate import Overdose

from conftest import Q, narrative

GOAL = "happens(patient_bolus_completed, T), T #=< 9"
START = "patient_bolus_delivery_started in [0, 10] max 1"


@pytest.fixture(scope="module")
def solution(pca):
    sols = list(abduce_events(pca, narrative("empty.nrt"), GOAL, [AbducibleSpec.parse(START)]))
    assert len(sols) == 1
    return sols[0]


def test_start_window_region(solution):
    assert solution.hypothesis_text() == ["patient_bolus_delivery_started@Ts"]
    assert solution.region_text() == ["0 #=< Ts", "Ts #=< 4"]


def test_random_points_reprove_the_goal(pca, solution):
    rng = random.Random(20240917)
    points = solution.sample_points(20, rng)
    assert len(points) == 20
    for pt in points:
        (ts,) = pt.values()
        assert 0 <= ts <= 4
        tl = trigger_closure(pca, solution.instantiate(pt))
        assert list(query(tl, GOAL)), f"goal fails with start at {ts}"


def test_points_outside_the_region_fail(pca, solution):
    (v,) = solution.variables
    for ts in [Q("41/10"), 5, 9]:
        tl = trigger_closure(pca, solution.instantiate({v: Q(ts)}))
        assert not list(query(tl, GOAL))


def test_refine_narrows_the_same_store(solution):
    narrowed = refine(solution, "Ts #>= 3")
    assert narrowed is not UNSAT
    assert narrowed.region_text() == ["3 #=< Ts", "Ts #=< 4"]
    assert refine(solution, "Ts #>= 5") is UNSAT


def test_refine_with_a_second_use_of_the_start(solution):
    # total reaches 25 by Ts + 5 and stays there, so Ts + 6 adds nothing new
    r = refine(solution, "holdsAt(total_drug_delivered(25), Ts + 6)")
    assert r is not UNSAT
    assert r.region_text() == ["0 #=< Ts", "Ts #=< 4"]
    r2 = refine(solution, "holdsAt(total_drug_delivered(25), Ts + 4)")
    assert r2 is UNSAT


def test_spec_parsing():
    s = AbducibleSpec.parse("patient_bolus_delivery_started in [1/2, 3] max 2")
    assert (s.lo, s.hi, s.max_count) == (Q("1/2"), 3, 2)
    with pytest.raises(UnboundedWindow):
        AbducibleSpec.parse("patient_bolus_delivery_started in [0, inf] max 1")
    with pytest.raises(ValueError):
        AbducibleSpec.parse("patient_bolus_delivery_started in [3, 1] max 1")
    with pytest.raises(ValueError):
        AbducibleSpec.parse("patient_bolus_delivery_started somewhere")


def test_window_beyond_horizon_is_rejected(pca):
    spec = AbducibleSpec.parse("patient_bolus_delivery_started in [0, 20] max 1")
    with pytest.raises(ValueError):
        list(abduce_events(pca, narrative("empty.nrt"), GOAL, [spec]))


def test_impossible_goal_exhausts(pca):
    spec = AbducibleSpec.parse("patient_bolus_delivery_started in [6, 10] max 1")
    with pytest.raises(SearchExhausted):
        list(abduce_events(pca, narrative("empty.nrt"), GOAL, [spec]))


def test_solutions_stay_inside_declared_windows(pca):
    spec = AbducibleSpec.parse("patient_bolus_delivery_started in [1, 3] max 2")
    goal = "holdsAt(total_drug_delivered(V), 10), V #>= 25"
    for sol in abduce_events(pca, narrative("empty.nrt"), goal, [spec]):
        assert len(sol.hypotheses) <= 2
        st = sol.store
        for v in sol.variables:
            lo, _, hi, _ = st.bounds(v)
            assert lo is not None and lo >= 1 and hi is not None and hi <= 3


def test_overdose_parameter_region_is_m_below_ten(pca, n1):
    regions = abduce_parameters(pca, n1, Overdose(0, 0).goal("M", "W"), ["M"], fixed={"W": 2})
    assert [r.text() for r in regions] == [["M #< 10"]]
    (c,) = regions[0].constraints
    (m,) = c.vars()
    got = ConstraintStore().add(c)
    expected = ConstraintStore().add(LinConstraint.make(m, "<", 10))
    assert got.entails(expected.constraints()[0]) and expected.entails(c)
