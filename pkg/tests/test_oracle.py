from __future__ import annotations

import csv

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecrv.engine import ZenoError
from ecrv.model import parse_domain, parse_narrative
from ecrv.oracle import OracleError, check_model, simulate

from conftest import CORPUS_RUNS, Q, load, narrative

DTS = [Q(1), Q("1/2"), Q("1/4")]


@pytest.mark.parametrize("dt", DTS, ids=str)
@pytest.mark.parametrize("run", CORPUS_RUNS, ids=lambda r: f"{r[0]}+{r[1][:14]}")
def test_engine_and_oracle_agree_on_corpus(run, dt):
    mname, nname = run
    _, diffs = check_model(load(mname), narrative(nname), dt)
    assert [str(d) for d in diffs] == []


def test_both_sides_refuse_the_zeno_toggle():
    m, n = load("toggle.ec"), narrative("toggle.nrt")
    with pytest.raises(ZenoError):
        simulate(m, n, Q(1), zeno_bound=60)
    with pytest.raises(ZenoError):
        check_model(m, n, Q(1), zeno_bound=60)


def test_trivial_model_agrees():
    m = parse_domain("fluent(f).")
    for dt in ["1", "1/3", "7/2"]:
        _, diffs = check_model(m, parse_narrative("horizon(10)."), Q(dt))
        assert diffs == []


def test_grid_includes_event_and_crossing_times(pca, n1):
    trace = simulate(pca, n1, Q(3))
    assert {Q(0), Q(2), Q(3), Q(6), Q(7), Q(9), Q(10)} <= set(trace.times)
    assert trace.rows[Q(7)]["total_drug_delivered"] == 25
    assert trace.rows[Q(7)]["patient_bolus_delivery_enabled"] is True
    assert trace.rows[Q(10)]["patient_bolus_delivery_enabled"] is False


def test_nonpositive_step_is_rejected(pca, n1):
    for dt in (0, -1):
        with pytest.raises(OracleError):
            simulate(pca, n1, dt)


def test_flipped_clipping_is_detected_at_event_instants(pca, n1):
    _, diffs = check_model(pca, n1, Q("1/4"), clip="closed")
    assert diffs
    assert {d.time for d in diffs} == {Q(2), Q(7)}
    assert all(d.fluent == "patient_bolus_delivery_enabled" for d in diffs)


def test_csv_dump(pca, n1, tmp_path):
    trace = simulate(pca, n1, Q("1/2"))
    out = tmp_path / "trace.csv"
    trace.to_csv(out)
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["time", "fluent", "value"]
    assert ["9/2", "total_drug_delivered", "25/2"] in rows
    assert ["8", "patient_bolus_delivery_enabled", "false"] in rows
    assert len(rows) == 1 + len(trace.times) * len(trace.fluents)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.fractions(min_value=0, max_value=40, max_denominator=4), min_size=0, max_size=3, unique=True)
       .filter(lambda ts: all(b - a > 5 for a, b in zip(sorted(ts), sorted(ts)[1:]))),
       st.sampled_from(DTS))
def test_halving_the_step_keeps_shared_samples(pca, ts, dt):
    text = "".join(f"happens(patient_bolus_delivery_started, {t}).\n" for t in ts) + "horizon(48)."
    n = parse_narrative(text)
    coarse, fine = simulate(pca, n, dt), simulate(pca, n, dt / 2)
    for t in coarse.times:
        assert coarse.rows[t] == fine.rows[t]
