from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

PLOT_WIDTH = 900
CURVE_COLORS = {"x": "#49a9de", "y": "#72cfff", "z": "#e07a3f"}


def _qt():
    # Plots are rendered without a display; the platform must be chosen before the app exists.
    os.environ.setdefault("QT_QPA_PLATFORM", "offscreen")
    import pyqtgraph as pg
    import pyqtgraph.exporters  # noqa: F401

    pg.mkQApp()
    pg.setConfigOptions(antialias=False, background="#ffffff", foreground="#5a6d84")
    return pg


def format_axis_micron(metres: float) -> str:
    value = metres * 1e6
    if abs(value) >= 100 or value == round(value):
        return f"{value:.0f}"
    return f"{value:.1f}"


def _axis_items(pg):
    class MicronAxisItem(pg.AxisItem):
        def tickStrings(self, values, scale, spacing):  # noqa: N802
            return [format_axis_micron(float(v)) for v in values]

    class MegahertzAxisItem(pg.AxisItem):
        def tickStrings(self, values, scale, spacing):  # noqa: N802
            return [f"{float(v) / 1e6:g}" for v in values]

    return MicronAxisItem, MegahertzAxisItem


def _export(pg, plot_item, path: Path) -> Path:
    exporter = pg.exporters.ImageExporter(plot_item)
    exporter.parameters()["width"] = PLOT_WIDTH
    exporter.export(str(path))
    logger.debug("plot written to %s", path)
    return path


def _plot(pg, bottom_axis, bottom_label: str, left_label: str):
    widget = pg.PlotWidget(axisItems={"bottom": bottom_axis})
    widget.showGrid(x=True, y=True, alpha=0.12)
    widget.setMenuEnabled(False)
    widget.setLabel("bottom", bottom_label)
    widget.setLabel("left", left_label)
    widget.plotItem.hideButtons()
    widget.addLegend()
    widget.resize(PLOT_WIDTH, int(PLOT_WIDTH * 0.6))
    return widget


def plot_stability_sweep(sweep, path: str | Path) -> Path:
    pg = _qt()
    _, MegahertzAxisItem = _axis_items(pg)
    widget = _plot(pg, MegahertzAxisItem(orientation="bottom"), "RF drive (MHz)", "Secular frequency (Hz)")
    for k, label in enumerate(("x", "y", "z")):
        values = sweep.mode_frequencies[:, k]
        ok = np.isfinite(values)
        widget.plot(sweep.rf_frequencies[ok], values[ok], pen=pg.mkPen(width=1.4, color=CURVE_COLORS[label]), name=label)
    for crossing in sweep.crossings:
        widget.addItem(pg.InfiniteLine(pos=crossing, angle=90, pen=pg.mkPen("#9a9a9a", style=pg.QtCore.Qt.PenStyle.DashLine)))
    return _export(pg, widget.plotItem, Path(path))


def plot_axial_profiles(profiles, path: str | Path) -> Path:
    pg = _qt()
    MicronAxisItem, _ = _axis_items(pg)
    widget = _plot(pg, MicronAxisItem(orientation="bottom"), "Axial offset (um)", "Heating per length (1/s/m)")
    for profile in profiles:
        color = CURVE_COLORS.get(profile.mode, "#333333")
        widget.plot(profile.bin_centers, profile.smoothed, pen=pg.mkPen(width=1.4, color=color), name=profile.mode)
    return _export(pg, widget.plotItem, Path(path))


def plot_cumulative(curves: dict[str, tuple[np.ndarray, np.ndarray]], path: str | Path) -> Path:
    pg = _qt()
    MicronAxisItem, _ = _axis_items(pg)
    widget = _plot(pg, MicronAxisItem(orientation="bottom"), "Patch distance (um)", "Cumulative fraction")
    widget.setYRange(0.0, 1.02, padding=0)
    for mode, (distances, fraction) in curves.items():
        color = CURVE_COLORS.get(mode, "#333333")
        widget.plot(distances, fraction, pen=pg.mkPen(width=1.4, color=color), name=mode)
    return _export(pg, widget.plotItem, Path(path))
