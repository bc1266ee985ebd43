"""Static SVG line plots from result tables.

Figures are built through the object API (no pyplot state) and written with
a fixed hash salt and no date stamp so identical tables give identical files.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from matplotlib import rc_context
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

# sweep variables whose grid values are already in dB / dBm
DB_SWEEPS = frozenset({"eta", "P_rho", "P_R", "interference"})

_UNITS = {"eta": "eta [dB]", "P_rho": "pilot power [dBm]", "P_R": "relay power [dBm]",
          "interference": "sigma_LIR^2 = sigma_UI^2 [dB rel. sigma^2]",
          "qos_level": "QoS rate [bit/s/Hz]", "iterations": "iteration"}


@dataclass(frozen=True)
class PlotSpec:
    metrics: tuple = ("ee",)
    title: str = ""
    ylabel: str = ""
    xlabel: str | None = None
    logy: bool = False


def _series(rows, metric):
    """Group rows of one metric by (scheme, mode) preserving first-seen order."""
    out = {}
    for r in rows:
        if r["metric"] != metric:
            continue
        key = r["scheme"] if r["mode"] in ("ee", "maxmin", "se", "none") else f"{r['scheme']} ({r['mode']})"
        out.setdefault(key, []).append((float(r["sweep_value"]), float(r["value"])))
    return out


def emit_plot(rows: list[dict], spec: PlotSpec, path=None) -> str:
    """Render one polyline per series; NaN values break the line. Returns the SVG text.

    A dB-valued sweep axis is a logarithmic axis of the underlying linear
    quantity, so it is drawn with uniform spacing in dB.
    """
    if not rows:
        raise ValueError("empty table: nothing to plot")
    sweep = rows[0]["sweep_var"]
    fig = Figure(figsize=(6.4, 4.4))
    FigureCanvasSVG(fig)
    ax = fig.add_subplot(111)
    drawn = 0
    multi = len(spec.metrics) > 1
    for metric in spec.metrics:
        for label, pts in _series(rows, metric).items():
            pts.sort(key=lambda t: t[0])
            x = np.array([a for a, _ in pts])
            y = np.array([b for _, b in pts])
            ax.plot(x, y, marker="o", markersize=3, linewidth=1.2,
                    label=f"{label}: {metric}" if multi else label)
            drawn += 1
    if not drawn:
        raise ValueError(f"no rows for metrics {spec.metrics}")
    if spec.logy:
        ax.set_yscale("log")
    ax.set_xlabel(spec.xlabel or _UNITS.get(sweep, sweep))
    ax.set_ylabel(spec.ylabel or ", ".join(spec.metrics))
    if spec.title:
        ax.set_title(spec.title)
    ax.grid(True, linewidth=0.4, alpha=0.6)
    ax.legend(fontsize=7)
    fig.tight_layout()
    buf = io.StringIO()
    with rc_context({"svg.hashsalt": "mmrelay", "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text
