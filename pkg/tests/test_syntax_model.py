from __future__ import annotations

import time
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecrv.model import (BeyondHorizon, MissingHorizon, NegativeTime, NonStratifiedError, has_errors,
                        parse_domain, parse_narrative, stratification_check, validate_model)
from ecrv.syntax import ParseError, clauses_equal, format_clause, format_term, parse_clauses, parse_term

from conftest import corpus_text, load


def test_listing_parses_without_errors_and_quickly():
    text = corpus_text("pca_listing.ec")
    t0 = time.perf_counter()
    model = parse_domain(text)
    diags = validate_model(model)
    assert time.perf_counter() - t0 < 0.1
    assert not has_errors(diags)
    counts = model.counts()
    assert counts["trajectories"] == 2 and counts["triggers"] == 2
    assert counts["initiates"] == 1 and counts["terminates"] == 1


def test_listing_round_trips():
    model = parse_domain(corpus_text("pca_listing.ec"))
    again = parse_domain(model.to_text())
    assert model.equivalent(again)


@pytest.mark.parametrize("name", ["pca_bolus.ec", "pca_listing.ec", "toggle.ec", "staged.ec"])
def test_corpus_models_round_trip(name):
    clauses = parse_clauses(corpus_text(name))
    for c in clauses:
        (back,) = parse_clauses(format_clause(c))
        assert clauses_equal(c, back)


def test_rationals_are_exact():
    assert parse_term("1/3") == Fraction(1, 3)
    assert parse_term("0.25") == Fraction(1, 4)


def test_parse_error_reports_position_and_expectation():
    with pytest.raises(ParseError) as e:
        parse_clauses("fluent(a).\ninitiates(e, a, T) :- holdsAt(b, T\n")
    assert e.value.line >= 2 and e.value.col >= 1
    assert e.value.expected


def test_undeclared_fluent_is_an_error():
    model = parse_domain("event(e).\ninitiates(e, nope, T).\n")
    diags = validate_model(model)
    assert has_errors(diags)
    assert any("undeclared fluent nope" in d.message for d in diags)


def test_nonlinear_constraint_is_rejected():
    model = parse_domain("fluent(v(X)). fluent(s). event(e).\n"
                         "trajectory(s, T1, v(X), T2) :- X #= (T2 - T1) * (T2 - T1).\n")
    assert any("non-linear" in d.message for d in validate_model(model))


def test_negation_cycle_is_not_stratified():
    model = parse_domain("p(X) :- q(X), not r(X).\nr(X) :- q(X), not p(X).\nq(1).\n")
    with pytest.raises(NonStratifiedError):
        stratification_check(model)
    assert has_errors(validate_model(model))


def test_narrative_errors():
    with pytest.raises(MissingHorizon):
        parse_narrative("happens(e, 1).")
    with pytest.raises(NegativeTime):
        parse_narrative("happens(e, -1). horizon(5).")
    with pytest.raises(BeyondHorizon):
        parse_narrative("happens(e, 6). horizon(5).")
    with pytest.raises(ParseError):
        parse_narrative("happens(e(X), 1). horizon(5).")


def test_narrative_is_sorted_by_time():
    n = parse_narrative("happens(b, 3). happens(a, 1/2). horizon(5).")
    assert [o.time for o in n.occurrences] == [Fraction(1, 2), Fraction(3)]


def test_functional_detection():
    model = load("pca_bolus.ec")
    assert model.is_functional("total_drug_delivered")
    assert not model.is_functional("patient_bolus_delivery_enabled")
    sym = parse_domain("fluent(door_open(front)). event(e). initiates(e, door_open(front), T).")
    assert not sym.is_functional("door_open")


names = st.sampled_from(["a", "b", "go", "stop_now"])
nums = st.fractions(min_value=-20, max_value=20, max_denominator=8)


@st.composite
def terms(draw, depth=2):
    if depth == 0 or draw(st.booleans()):
        return draw(st.one_of(names.map(lambda n: parse_term(n)), nums))
    op = draw(st.sampled_from(["+", "-", "*", "/", "f", "g"]))
    if op in "+-*/":
        return parse_term(f"({format_term(draw(terms(depth - 1)))}) {op} ({format_term(draw(terms(depth - 1)))})")
    args = ", ".join(format_term(draw(terms(depth - 1))) for _ in range(draw(st.integers(1, 3))))
    return parse_term(f"{op}({args})")


@settings(max_examples=100, deadline=None)
@given(terms())
def test_term_printing_round_trips(t):
    assert parse_term(format_term(t)) == t
