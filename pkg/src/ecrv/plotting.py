"""Figures for oracle traces and property reports (matplotlib, Agg backend)."""

from __future__ import annotations

import math
from fractions import Fraction

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .syntax import format_term  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
}

EVENT_COLOR = "0.55"


def figsize(scale: float = 1.0, nrows: int = 1) -> tuple:
    width = 7.0 * scale
    golden = (math.sqrt(5.0) - 1.0) / 2.0
    return (width, max(2.2, nrows * width * golden * 0.45))


def _events(ax, events, label: bool = False):
    for t, name, source in events:
        ax.axvline(float(t), color=EVENT_COLOR, ls=":" if source == "triggered" else "--", lw=0.8)
        if label:
            ax.annotate(name, (float(t), 1.0), xycoords=("data", "axes fraction"), rotation=90,
                        fontsize=6, va="top", ha="right", color="0.3")


def plot_trace(trace, path, title: str | None = None) -> None:
    """One panel per functional fluent plus a band chart of the boolean ones."""
    values = [f for f in trace.fluents if any(not isinstance(v, bool) and v is not None
                                              for _, v in trace.series(f))]
    bools = [f for f in trace.fluents if f not in values]
    nrows = len(values) + (1 if bools else 0) or 1
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(nrows, 1, figsize=figsize(1.0, nrows), sharex=True, squeeze=False)
        axes = axes[:, 0]
        for ax, f in zip(axes, values):
            pts = [(float(t), float(v)) for t, v in trace.series(f) if v is not None and not isinstance(v, bool)]
            if pts:
                xs, ys = zip(*pts)
                ax.plot(xs, ys, marker=".", ms=3, label=f)
            ax.set_ylabel(f, rotation=0, ha="right", va="center")
            _events(ax, trace.events)
        if bools:
            ax = axes[len(values)]
            for i, f in enumerate(bools):
                xs = [float(t) for t in trace.times]
                ys = [1 if v else 0 for _, v in trace.series(f)]
                # step="pre": each sample covers the stretch that ends at it
                ax.fill_between(xs, i, [i + 0.8 * y for y in ys], step="pre", alpha=0.6)
            ax.set_yticks([i + 0.4 for i in range(len(bools))])
            ax.set_yticklabels(bools)
            ax.set_ylim(-0.2, len(bools))
            _events(ax, trace.events, label=True)
        axes[-1].set_xlabel("time")
        axes[-1].set_xlim(0, float(trace.horizon))
        fig.suptitle(title or f"oracle trace (dt = {trace.dt})")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)


def _curve(tl, fluent: str, n: int = 400):
    from .engine import NoValue, value_at

    h = tl.horizon
    ts = sorted({Fraction(0), h, *tl.times, *(h * Fraction(i, n) for i in range(n + 1))})
    xs, ys = [], []
    for t in ts:
        try:
            v = value_at(tl, fluent, t)[0]
        except NoValue:
            continue
        xs.append(float(t))
        ys.append(float(v))
    return xs, ys


def plot_property(tl, report, prop, path) -> None:
    """Delivered-amount curve with the witness window, or the trigger/response timeline."""
    from .validate import Overdose, ResponseTime

    events = [(e.time, format_term(e.event), e.source) for e in tl.events()]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(1.0, 2))
        if isinstance(prop, Overdose):
            xs, ys = _curve(tl, prop.fluent)
            ax.plot(xs, ys, color="C0", label=prop.fluent)
            w = report.witness
            if w and "T1" in w and "T2" in w:
                t1, t2 = float(Fraction(w["T1"])), float(Fraction(w["T2"]))
                ax.axvspan(t1, t2, color="C3", alpha=0.2, label=f"witness window, {w.get('delivered', '?')} delivered")
            ax.set_ylabel(prop.fluent)
        elif isinstance(prop, ResponseTime):
            D = float(prop.deadline)
            for e in tl.events():
                name = format_term(e.event)
                if name == prop.trigger:
                    t = float(e.time)
                    ax.axvspan(t, t + D, color="C2", alpha=0.15)
                    ax.plot([t], [1], "v", color="C2")
                elif name == prop.response:
                    ax.plot([float(e.time)], [0], "^", color="C1")
            ax.set_yticks([0, 1])
            ax.set_yticklabels([prop.response, prop.trigger])
            ax.set_ylim(-0.5, 1.5)
        _events(ax, events, label=True)
        ax.set_xlim(0, float(tl.horizon))
        ax.set_xlabel("time")
        ax.set_title(f"{report.name}: {report.verdict}")
        if ax.get_legend_handles_labels()[0]:
            ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
