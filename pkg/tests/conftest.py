from __future__ import annotations

from fractions import Fraction
from pathlib import Path

import pytest

import ecrv
from ecrv.engine import trigger_closure
from ecrv.model import parse_domain, parse_narrative

CORPUS = Path(ecrv.__file__).parent / "corpus"


def corpus_text(name: str) -> str:
    return (CORPUS / name).read_text()


def load(name: str):
    return parse_domain(corpus_text(name))


def narrative(name_or_text: str):
    if name_or_text.endswith((".nrt", ".scn")):
        return parse_narrative(corpus_text(name_or_text))
    return parse_narrative(name_or_text)


@pytest.fixture(scope="session")
def pca():
    return load("pca_bolus.ec")


@pytest.fixture(scope="session")
def n1():
    return narrative("n1.nrt")


@pytest.fixture(scope="module")
def tl_n1(pca, n1):
    return trigger_closure(pca, n1)


def Q(x) -> Fraction:
    return Fraction(x)


# (model, narrative text or file) pairs that make up the bundled corpus runs
CORPUS_RUNS = [
    ("pca_bolus.ec", "n1.nrt"),
    ("pca_bolus.ec", "sunny_day_1.nrt"),
    ("pca_bolus.ec", "sunny_day_2.nrt"),
    ("pca_bolus.ec", "sunny_day_3.nrt"),
    ("pca_bolus.ec", "empty.nrt"),
    ("pca_listing.ec", "n1.nrt"),
    ("toggle.ec", "happens(switch_on, 0). horizon(15/8)."),
    ("staged.ec", "staged.nrt"),
]


def corpus_goals(model) -> list[str]:
    goals = []
    for name, info in sorted(model.fluents.items()):
        if info.arity == 0:
            goals += [f"holdsAt({name}, T)", f"not holdsAt({name}, T)"]
        else:
            args = ", ".join(f"X{i}" for i in range(info.arity))
            goals.append(f"holdsAt({name}({args}), T)")
    goals += [f"happens({e}, T)" for e in sorted(model.events)]
    return goals


def corpus_proofs():
    """Yield (label, timeline, answer-or-(proof, None)) for every proof the corpus queries emit."""
    from ecrv.engine import holds_at, query, value_at
    from ecrv.engine.errors import EngineError

    for mname, nname in CORPUS_RUNS:
        model = load(mname)
        tl = trigger_closure(model, narrative(nname))
        for g in corpus_goals(model):
            for a in query(tl, g):
                yield f"{mname}/{nname}: {g}", tl, a
        probes = sorted({Fraction(0), tl.horizon, *tl.times, *((a + b) / 2 for a, b in zip(tl.times, tl.times[1:]))})
        for name, info in sorted(model.fluents.items()):
            for t in probes:
                try:
                    if info.functional:
                        _, p = value_at(tl, name, t)
                    elif info.arity == 0:
                        _, p = holds_at(tl, name, t)
                    else:
                        continue
                except EngineError:
                    continue
                yield f"{mname}/{nname}: {name}@{t}", tl, (p, None)


_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::test_criterion_")[1]
        num, _, label = name.partition("_")
        _CRITERIA[int(num)] = (label.replace("_", " "), report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        label, outcome = _CRITERIA[num]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} {label:<34} {verdict}")
