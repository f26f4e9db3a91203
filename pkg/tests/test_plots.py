from __future__ import annotations

import numpy as np
import pytest

from trapnoise.heating import axial_profile, cumulative_curve
from trapnoise.plots import format_axis_micron
from trapnoise.trapdynamics import StabilitySweep

pytest.importorskip("pyqtgraph")
pytest.importorskip("PySide6")


def test_micron_tick_labels():
    assert format_axis_micron(150e-6) == "150"
    assert format_axis_micron(2.5e-6) == "2.5"
    assert format_axis_micron(-300e-6) == "-300"


def test_stability_plot_is_written(tmp_path):
    from trapnoise.plots import plot_stability_sweep

    grid = np.array([5e6, 10e6, 20e6])
    secular = np.array([[2e6, 2.1e6, 0.5e6], [1e6, 1.05e6, 0.5e6], [np.nan, np.nan, np.nan]])
    sweep = StabilitySweep(grid, secular, np.array([0.42, 0.105, np.nan]), np.array([False, True, False]), (8e6,))
    path = plot_stability_sweep(sweep, tmp_path / "sweep.png")
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_heating_plots_are_written(tmp_path, toy_result):
    from trapnoise.plots import plot_axial_profiles, plot_cumulative

    report = toy_result.report
    profiles = [axial_profile(report, mode) for mode in ("x", "y", "z")]
    assert plot_axial_profiles(profiles, tmp_path / "profiles.png").stat().st_size > 0
    curves = {mode: cumulative_curve(report, mode) for mode in ("x", "y", "z")}
    assert plot_cumulative(curves, tmp_path / "cumulative.png").stat().st_size > 0
