from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecrv.engine import (DepthExceeded, GoalError, ModelConflict, MultiValue, NoValue, Stats, checkpoint, holds_at,
                         query, solve_with_cache, trigger_closure, value_at)
from ecrv.model import parse_domain, parse_narrative

from conftest import Q, narrative


def answers(tl, goal, **kw):
    return [str(a) for a in query(tl, goal, **kw)]


def test_completion_is_derived_at_seven(tl_n1):
    assert answers(tl_n1, "happens(patient_bolus_completed, T)") == ["T = 7"]
    assert answers(tl_n1, "happens(patient_bolus_delivery_stopped, T)") == ["T = 7"]


def test_enabled_interval_is_open_on_the_left(tl_n1):
    assert answers(tl_n1, "holdsAt(patient_bolus_delivery_enabled, T)") == ["2 #< T, T #=< 7"]
    assert answers(tl_n1, "not holdsAt(patient_bolus_delivery_enabled, T)") == ["0 #=< T, T #=< 2", "7 #< T, T #=< 10"]


@pytest.mark.parametrize("t,expected", [(0, False), (2, False), ("5/2", True), (7, True), ("71/10", False), (10, False)])
def test_holds_at_instants(tl_n1, t, expected):
    assert holds_at(tl_n1, "patient_bolus_delivery_enabled", t)[0] is expected


def test_total_delivered_pieces(tl_n1):
    assert answers(tl_n1, "holdsAt(total_drug_delivered(V), T)") == [
        "V = 0, 0 #=< T, T #=< 2", "V = 5*T - 10, 2 #< T, T #=< 7", "V = 25, 7 #< T, T #=< 10"]


# independently: 0 + (t - 2) * 5 on (2, 7], frozen at 25 afterwards
@settings(max_examples=60, deadline=None)
@given(st.fractions(min_value=0, max_value=10, max_denominator=64))
def test_total_delivered_formula(tl_n1, t):
    v, _ = value_at(tl_n1, "total_drug_delivered", t)
    expected = Fraction(0) if t <= 2 else (t - 2) * 5 if t <= 7 else Fraction(25)
    assert v == expected and isinstance(v, Fraction)


def test_value_at_rejects_floats_and_range(tl_n1):
    with pytest.raises(GoalError):
        value_at(tl_n1, "total_drug_delivered", 2.5)
    with pytest.raises(GoalError):
        value_at(tl_n1, "total_drug_delivered", 11)
    with pytest.raises(GoalError, match="undeclared fluent"):
        holds_at(tl_n1, "nonexistent_fluent", 1)
    with pytest.raises(GoalError, match="undeclared fluent"):
        list(query(tl_n1, "holdsAt(nonexistent_fluent, 1)"))


def test_no_value_before_any_initiation(pca):
    tl = trigger_closure(pca, narrative("n1.nrt"))
    with pytest.raises(NoValue):
        value_at(tl, "patient_bolus_drug_delivered", 1)


def test_simultaneous_initiate_and_terminate_is_a_conflict():
    m = parse_domain("fluent(f). event(a). event(b). initiates(a, f, T). terminates(b, f, T).")
    tl = trigger_closure(m, parse_narrative("happens(a, 1). happens(b, 1). horizon(5)."))
    with pytest.raises(ModelConflict):
        holds_at(tl, "f", 3)


def test_two_values_at_once_is_multivalue():
    m = parse_domain("fluent(level(X)). event(a). initiallyP(level(1)). initiallyP(level(2)).")
    tl = trigger_closure(m, parse_narrative("horizon(5)."))
    with pytest.raises(MultiValue):
        value_at(tl, "level", 1)


def test_release_leaves_truth_open():
    m = parse_domain("fluent(f). event(a). event(r). initiates(a, f, T). releases(r, f, T).")
    tl = trigger_closure(m, parse_narrative("happens(a, 1). happens(r, 3). horizon(5)."))
    assert holds_at(tl, "f", 2)[0] is True
    assert holds_at(tl, "f", 4)[0] is False


def test_depth_bound_is_reported():
    m = parse_domain("fluent(f). count(0).\ncount(X) :- X #> 0, Y #= X - 1, count(Y).\n")
    tl = trigger_closure(m, parse_narrative("horizon(1)."))
    assert answers(tl, "count(40)") == ["true"]
    with pytest.raises(DepthExceeded):
        list(query(tl, "count(40)", depth_bound=10))


def test_constructive_negation_over_values(tl_n1):
    got = answers(tl_n1, "holdsAt(total_drug_delivered(V), T), V #>= 20, not holdsAt(patient_bolus_delivery_enabled, T)")
    assert got == ["V = 25, 7 #< T, T #=< 10"]


def test_cache_is_transparent_and_saves_work(pca, n1):
    tl = trigger_closure(pca, n1)
    goal = "holdsAt(total_drug_delivered(V1), T1), holdsAt(total_drug_delivered(V2), T2), T1 #< T2, T2 - T1 #=< 2"
    on, stats = solve_with_cache(tl, goal, cache=True)
    off, _ = solve_with_cache(tl, goal, cache=False)
    assert [a.key() for a in on] == [a.key() for a in off]
    assert stats.hits > 0


def test_checkpoint_is_transparent(pca, n1):
    plain = trigger_closure(pca, n1)
    cp = checkpoint(trigger_closure(pca, n1))
    for t in [0, 1, 2, Q("9/2"), 7, Q("15/2"), 10]:
        assert value_at(plain, "total_drug_delivered", t)[0] == value_at(cp, "total_drug_delivered", t)[0]
        assert holds_at(plain, "patient_bolus_delivery_enabled", t)[0] == \
            holds_at(cp, "patient_bolus_delivery_enabled", t)[0]


def _starts(ts, horizon=60):
    lines = "".join(f"happens(patient_bolus_delivery_started, {t}).\n" for t in ts)
    return parse_narrative(lines + f"horizon({horizon}).")


def _spaced(ts):
    # a restart exactly when an earlier bolus stops is a genuine initiate/terminate conflict; keep clear of it
    ts = sorted(ts)
    return all(b - a > 5 for a, b in zip(ts, ts[1:]))


start_sets = st.lists(st.fractions(min_value=0, max_value=50, max_denominator=4), min_size=1, max_size=4,
                      unique=True).filter(_spaced)


@settings(max_examples=25, deadline=None)
@given(start_sets)
def test_inertia_between_events(pca, ts):
    # the enabled flag can only change at event instants
    tl = trigger_closure(pca, _starts(ts))
    bounds = sorted(set(tl.times) | {tl.horizon})
    for lo, hi in zip(bounds, bounds[1:]):
        mid = (lo + hi) / 2
        a = holds_at(tl, "patient_bolus_delivery_enabled", mid)[0]
        b = holds_at(tl, "patient_bolus_delivery_enabled", hi)[0]
        assert a == b


@settings(max_examples=25, deadline=None)
@given(start_sets)
def test_closure_is_deterministic_and_order_free(pca, ts):
    a = trigger_closure(pca, _starts(ts))
    b = trigger_closure(pca, _starts(list(reversed(ts))))
    assert [str(e) for e in a.events()] == [str(e) for e in b.events()]


@settings(max_examples=15, deadline=None)
@given(start_sets, st.fractions(min_value=0, max_value=60, max_denominator=8))
def test_cache_and_checkpoints_never_change_answers(pca, ts, t):
    base = trigger_closure(pca, _starts(ts))
    cp = checkpoint(trigger_closure(pca, _starts(ts)))
    ref = value_at(base, "total_drug_delivered", t, tabling=False, use_checkpoints=False)[0]
    assert value_at(base, "total_drug_delivered", t)[0] == ref
    assert value_at(cp, "total_drug_delivered", t)[0] == ref


def test_expansion_counter_moves(tl_n1):
    s = Stats()
    list(query(tl_n1, "holdsAt(total_drug_delivered(V), 9)", stats=s))
    assert s.expansions > 0


def test_restart_at_completion_instant_conflicts(pca):
    # bolus from 0 completes at 5; a fresh start at 5 both initiates and terminates enabled
    with pytest.raises(ModelConflict):
        trigger_closure(pca, _starts([0, 5]))
