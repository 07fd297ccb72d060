from __future__ import annotations

from PIL import Image

from ecrv.engine import trigger_closure
from ecrv.oracle import simulate
from ecrv.plotting import figsize, plot_property, plot_trace
from ecrv.validate import Overdose, ResponseTime, check_property

from conftest import Q


def _png_ok(path):
    with Image.open(path) as im:
        assert im.format == "PNG"
        w, h = im.size
        assert w > 300 and h > 200


def test_trace_figure(pca, n1, tmp_path):
    out = tmp_path / "trace.png"
    plot_trace(simulate(pca, n1, Q("1/4")), out)
    _png_ok(out)


def test_overdose_figure_with_witness(pca, n1, tmp_path):
    tl = trigger_closure(pca, n1)
    prop = Overdose(9, 2)
    out = tmp_path / "overdose.png"
    plot_property(tl, check_property(pca, n1, prop, timeline=tl), prop, out)
    _png_ok(out)


def test_response_figure(pca, n1, tmp_path):
    tl = trigger_closure(pca, n1)
    prop = ResponseTime("patient_bolus_delivery_started", "patient_bolus_delivery_stopped", 4)
    out = tmp_path / "response.png"
    plot_property(tl, check_property(pca, n1, prop, timeline=tl), prop, out)
    _png_ok(out)


def test_figsize_grows_with_rows():
    assert figsize(1.0, 3)[1] > figsize(1.0, 1)[1]
