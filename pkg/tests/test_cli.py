from __future__ import annotations

import json
import shutil
import subprocess
import sys

import pytest

from ecrv.cli import main

from conftest import CORPUS

PCA = str(CORPUS / "pca_bolus.ec")
N1 = str(CORPUS / "n1.nrt")
SUNNY = str(CORPUS / "sunny_day.scn")
BAD = str(CORPUS / "seeded_bad.scn")


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(autouse=True)
def no_color(monkeypatch):
    monkeypatch.setenv("ECRV_COLOR", "0")


def test_parse(capsys):
    code, out, _ = run(capsys, "parse", str(CORPUS / "pca_listing.ec"))
    assert code == 0
    code, _, _ = run(capsys, "parse", str(CORPUS / "missing.ec"))
    assert code == 2


def test_check_exit_codes(capsys):
    assert run(capsys, "check", PCA, SUNNY)[0] == 0
    code, out, _ = run(capsys, "check", PCA, BAD)
    assert code == 1
    assert "total_drug_delivered(24)" in out and "actual value 25" in out
    assert run(capsys, "check", PCA, SUNNY, BAD)[0] == 1
    assert run(capsys, "check", str(CORPUS / "missing.ec"), SUNNY)[0] == 2


def test_query_answers(capsys):
    code, out, _ = run(capsys, "query", PCA, N1, "happens(patient_bolus_completed, T)")
    assert code == 0 and "T = 7" in out
    code, out, _ = run(capsys, "query", PCA, N1, "holdsAt(patient_bolus_delivery_enabled, T)")
    assert code == 0 and "2 #< T, T #=< 7" in out
    code, _, _ = run(capsys, "query", PCA, N1, "happens(patient_bolus_completed, 3)")
    assert code == 1
    code, _, err = run(capsys, "query", PCA, N1, "holdsAt(nonexistent_fluent, 1)")
    assert code == 2 and "undeclared fluent" in err
    assert run(capsys, "query", PCA, N1, "holdsAt(x, ")[0] == 2


def test_query_proof_and_explain(capsys, tmp_path):
    code, out, _ = run(capsys, "query", PCA, N1, "holdsAt(total_drug_delivered(V), 9)", "--json", "--proof")
    assert code == 0
    saved = tmp_path / "proof.json"
    saved.write_text(out)
    code, text, _ = run(capsys, "explain", str(saved))
    assert code == 0 and "snapshot" in text and "trajectory" in text


def test_abduce_events_and_parameters(capsys):
    empty = str(CORPUS / "empty.nrt")
    code, out, _ = run(capsys, "abduce", PCA, empty, "--goal", "happens(patient_bolus_completed, T), T #=< 9",
                       "--abducible", "patient_bolus_delivery_started in [0, 10] max 1")
    assert code == 0 and "0 #=< Ts, Ts #=< 4" in out
    code, _, err = run(capsys, "abduce", PCA, empty, "--goal", "happens(patient_bolus_completed, T)",
                       "--abducible", "patient_bolus_delivery_started in [0, inf] max 1")
    assert code == 2
    goal = ("holdsAt(total_drug_delivered(V1), T1), holdsAt(total_drug_delivered(V2), T2), "
            "T1 #< T2, T2 - T1 #=< W, V2 - V1 #> M")
    code, out, _ = run(capsys, "abduce", PCA, N1, "--goal", goal, "--param", "M", "--fix", "W=2")
    assert code == 0 and "M #< 10" in out
    assert run(capsys, "abduce", PCA, N1, "--goal", goal)[0] == 2


def test_oracle_command(capsys, tmp_path):
    csv_path, png = tmp_path / "t.csv", tmp_path / "t.png"
    code, _, _ = run(capsys, "oracle", PCA, N1, "--dt", "1/4", "--trace-out", str(csv_path), "--plot-out", str(png))
    assert code == 0
    assert csv_path.read_text().startswith("time,fluent,value")
    assert png.stat().st_size > 0
    assert run(capsys, "oracle", PCA, N1, "--dt", "0")[0] == 2
    code, out, _ = run(capsys, "oracle", PCA, N1, "--dt", "1/4", "--mutant", "closed-clip")
    assert code == 1 and "patient_bolus_delivery_enabled" in out


def test_property_command(capsys, tmp_path):
    png = tmp_path / "p.png"
    code, out, _ = run(capsys, "property", PCA, N1, "--overdose", "9", "2", "--plot-out", str(png))
    assert code == 1 and "T1 = 2" in out and png.stat().st_size > 0
    assert run(capsys, "property", PCA, N1, "--overdose", "10", "2")[0] == 0
    sunny = [str(CORPUS / f"sunny_day_{i}.nrt") for i in (1, 2, 3)]
    code, out, _ = run(capsys, "property", PCA, *sunny, "--overdose", "9", "2", "--json")
    assert code == 1 and json.loads(out)["counts"] == {"violation": 3}
    assert run(capsys, "property", PCA, N1, "--response", "patient_bolus_delivery_started",
               "patient_bolus_delivery_stopped", "5")[0] == 0
    assert run(capsys, "property", PCA, N1)[0] == 2


def test_zeno_is_an_error_exit(capsys):
    toggle = str(CORPUS / "toggle.ec")
    code, _, err = run(capsys, "query", toggle, str(CORPUS / "toggle.nrt"), "holdsAt(on, 1)", "--zeno-bound", "50")
    assert code == 2 and "Zeno" in err


JSON_COMMANDS = [
    ["parse", PCA],
    ["check", PCA, SUNNY, BAD],
    ["query", PCA, N1, "holdsAt(total_drug_delivered(V), T)", "--proof", "--stats"],
    ["query", PCA, N1, "holdsAt(nonexistent_fluent, 1)"],
    ["abduce", PCA, str(CORPUS / "empty.nrt"), "--goal", "happens(patient_bolus_completed, T), T #=< 9",
     "--abducible", "patient_bolus_delivery_started in [0, 10] max 1"],
    ["oracle", PCA, N1, "--dt", "1/2"],
    ["property", PCA, N1, "--overdose", "9", "2"],
]


@pytest.mark.parametrize("argv", JSON_COMMANDS, ids=lambda a: a[0])
def test_json_is_valid_deterministic_and_keeps_exit_codes(capsys, argv):
    text_code = run(capsys, *argv)[0]
    c1, o1, _ = run(capsys, *argv, "--json")
    c2, o2, _ = run(capsys, *argv, "--json")
    assert c1 == c2 == text_code
    assert o1 == o2
    if o1.strip():
        json.loads(o1)


@pytest.mark.skipif(shutil.which("ecrv") is None, reason="console script not installed")
def test_console_script_exit_codes():
    ok = subprocess.run(["ecrv", "check", PCA, SUNNY], capture_output=True, text=True)
    bad = subprocess.run(["ecrv", "check", PCA, BAD], capture_output=True, text=True)
    assert (ok.returncode, bad.returncode) == (0, 1)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "ecrv.cli", "query", PCA, N1, "happens(patient_bolus_completed, T)"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "T = 7" in r.stdout
