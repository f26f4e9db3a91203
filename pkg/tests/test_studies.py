from __future__ import annotations

import numpy as np
import pytest

from trapnoise.constants import CONCENTRATION_RADIUS, MHZ, MICRON, MODE_LABELS, PROFILE_BIN
from trapnoise.electrostatics import PatchCouplings
from trapnoise.errors import InsufficientResolutionError, ParameterError
from trapnoise.geometry import build_blade, build_skeleton
from trapnoise.heating import axial_profile, fraction_within, per_patch_heating
from trapnoise.models import YB171, BladeParams, DriveConfig, NoiseModel, Resolution, SkeletonParams
from trapnoise.studies import (
    GapEvaluation,
    GapSweep,
    compare,
    distance_scaling,
    fixed_axis_spectral_density,
    heating_objective,
    line_fit,
    optimize_gaps,
    power_law_exponent,
    run_validation,
)
from trapnoise.studies.compare import build_comparison
from trapnoise.studies.pipeline import mesh_and_solve
from trapnoise.studies.scaling import leave_one_out_spread
from trapnoise.studies.validation import check_disc_power_law, check_rate


def _with_noise(report, s0: float):
    couplings = {
        mode: PatchCouplings(report.modes.axis(mode), report.couplings[:, k], "adjoint")
        for k, mode in enumerate(MODE_LABELS)
    }
    return per_patch_heating(report.patches, couplings, report.modes, NoiseModel(s0), YB171, report.label)


def test_geometry_compared_with_itself(toy_geometry, toy_drive, toy_resolution):
    result = compare(
        toy_geometry,
        toy_geometry,
        drive=toy_drive,
        species=YB171,
        noise=NoiseModel(1e-12),
        resolution=toy_resolution,
        axial_frequency=None,
    )
    np.testing.assert_allclose(result.ratios, 1.0)
    assert result.summed_ratio == pytest.approx(1.0)
    checks = result.checks()
    assert not checks["summed_ratio_required"]["passed"]
    assert checks["toy_quadrupole_fraction_within_500um_z"]["passed"]
    assert result.summary()["ratio_per_mode"]["z"] == pytest.approx(1.0)


def test_swapped_comparison_inverts_ratios(toy_result):
    quiet = _with_noise(toy_result.report, 0.5e-12)
    forward = build_comparison(toy_result.report, quiet, 1.0)
    np.testing.assert_allclose(forward.ratios, 0.5)
    np.testing.assert_allclose(forward.swapped().ratios, 1.0 / forward.ratios)
    assert forward.summed_ratio <= 0.55


def test_zero_baseline_is_rejected(toy_result):
    silent = _with_noise(toy_result.report, 0.0)
    with pytest.raises(ParameterError) as info:
        build_comparison(silent, toy_result.report, 1.0)
    assert info.value.path == "noise.s0"


def test_line_fit_recovers_slope():
    x = np.array([100.0, 150.0, 200.0, 250.0]) * MICRON
    fit = line_fit(x, 0.4 * x + 5.0 * MICRON)
    assert fit.slope == pytest.approx(0.4)
    assert fit.intercept == pytest.approx(5.0 * MICRON)
    assert fit.r_squared == pytest.approx(1.0)
    assert leave_one_out_spread(fit) == pytest.approx(0.0, abs=1e-12)
    assert fit.summary(MICRON, "um")["intercept_um"] == pytest.approx(5.0)


def test_line_fit_needs_three_points():
    with pytest.raises(InsufficientResolutionError):
        line_fit([1.0, 2.0], [1.0, 2.0])


def test_power_law_exponent():
    d = np.array([100.0, 150.0, 200.0, 300.0]) * MICRON
    assert power_law_exponent(d, 3.0 * d**-4) == pytest.approx(4.0)


@pytest.mark.parametrize(
    ("distances", "policy"),
    [
        ([100e-6, 150e-6, 200e-6], "constant_ratio"),
        ([100e-6, 120e-6, 150e-6, 180e-6], "constant_ratio"),
        ([100e-6, 150e-6, 200e-6, 300e-6], "fastest"),
    ],
)
def test_distance_scaling_validates_inputs(distances, policy):
    with pytest.raises(ParameterError):
        distance_scaling(
            distances,
            SkeletonParams(),
            DriveConfig(150.0, 11e6),
            YB171,
            NoiseModel(1e-12),
            Resolution(),
            policy=policy,
        )


def _parabola(params: SkeletonParams) -> GapEvaluation:
    width_um = params.tooth_width / MICRON
    return GapEvaluation((width_um - 183.0) ** 2 + 1.0, 10.0, width_um)


def test_gap_optimization_refines_between_grid_points():
    sweep = GapSweep(tooth_widths=[w * MICRON for w in (150.0, 170.0, 190.0, 210.0)], refine_tolerance=0.5 * MICRON)
    result = optimize_gaps(SkeletonParams(), sweep, _parabola)
    assert result.improved
    assert len(result.grid) == 4
    assert result.refined
    assert result.best.tooth_width == pytest.approx(183.0 * MICRON, abs=2.0 * MICRON)
    assert result.improvement > 0.9
    assert result.radial_change == pytest.approx(0.0)
    assert result.summary()["improved"] is True


def test_gap_optimization_keeps_baseline_without_improvement():
    sweep = GapSweep(tooth_widths=[w * MICRON for w in (150.0, 170.0, 190.0)])
    result = optimize_gaps(SkeletonParams(), sweep, lambda params: GapEvaluation(1.0, 1.0, 1.0))
    assert not result.improved
    assert result.best == SkeletonParams()
    assert result.improvement == 0.0


def test_gap_sweep_rejects_empty_grid():
    with pytest.raises(ParameterError):
        optimize_gaps(SkeletonParams(), GapSweep(tooth_widths=()), _parabola)


def test_reference_rate_check():
    assert check_rate().passed


@pytest.mark.slow
def test_validation_suite_passes():
    results = run_validation(seed=0, sphere_subdivisions=4, include_disc=False)
    failed = [r.to_dict() for r in results if not r.passed]
    assert not failed


@pytest.mark.slow
def test_disc_field_noise_falls_as_fourth_power():
    assert check_disc_power_law().passed


REFERENCE_DRIVE = DriveConfig(150.0, 11.0 * MHZ)
# graded so the blade stays a single dense solve
REFERENCE_RESOLUTION = Resolution(target_edge=9.0 * MICRON, grading=2.0)


@pytest.fixture(scope="module")
def reference_comparison():
    return compare(
        build_blade(BladeParams()),
        build_skeleton(SkeletonParams()),
        drive=REFERENCE_DRIVE,
        species=YB171,
        noise=NoiseModel(1e-12),
        resolution=REFERENCE_RESOLUTION,
    )


@pytest.mark.slow
def test_default_geometries_concentrate_heating_near_the_ion(reference_comparison):
    for report in (reference_comparison.baseline, reference_comparison.candidate):
        for mode in MODE_LABELS:
            assert fraction_within(report, mode, CONCENTRATION_RADIUS) >= 0.97, (report.label, mode)


@pytest.mark.slow
def test_skeleton_axial_hotspot_and_radial_peak(reference_comparison):
    skeleton = reference_comparison.candidate
    assert 90.0 * MICRON <= axial_profile(skeleton, "z").peak <= 130.0 * MICRON
    for mode in ("x", "y"):
        assert axial_profile(skeleton, mode).peak == pytest.approx(0.5 * PROFILE_BIN)


@pytest.mark.slow
def test_skeleton_operating_point(reference_comparison):
    modes = reference_comparison.candidate.modes
    for mode in ("x", "y"):
        assert modes.frequency(mode) == pytest.approx(2.24 * MHZ, rel=0.25)
    assert 0.18 <= modes.ratio_max <= 0.22


@pytest.mark.slow
def test_blade_comparison_is_reported_at_matched_resolution(reference_comparison):
    baseline, candidate = reference_comparison.baseline, reference_comparison.candidate
    assert baseline.label == "blade" and candidate.label == "skeleton"
    assert baseline.metadata["target_edge_m"] == candidate.metadata["target_edge_m"]
    assert np.all(np.isfinite(reference_comparison.ratios)) and np.all(reference_comparison.ratios > 0.0)
    summary = reference_comparison.summary()
    required = summary["checks"]["summed_ratio_required"]
    assert required["passed"] == (reference_comparison.summed_ratio <= required["limit"])
    np.testing.assert_allclose(reference_comparison.swapped().ratios, 1.0 / reference_comparison.ratios)


@pytest.mark.slow
def test_hotspot_aligned_teeth_lower_axial_heating():
    evaluate = heating_objective(REFERENCE_DRIVE, YB171, NoiseModel(1e-12), REFERENCE_RESOLUTION)
    sweep = GapSweep(
        tooth_widths=[w * MICRON for w in (170.0, 190.0, 211.0, 230.0)],
        gap_phases=(0.5,),
        refine_tolerance=2.0 * MICRON,
    )
    result = optimize_gaps(SkeletonParams(), sweep, evaluate)
    assert result.improved
    assert result.best.tooth_width == pytest.approx(211.0 * MICRON, abs=15.0 * MICRON)
    assert result.improvement >= 0.005
    assert result.area_change > 0.0


@pytest.mark.slow
def test_hotspot_moves_linearly_with_distance():
    result = distance_scaling(
        [d * MICRON for d in (100.0, 150.0, 200.0, 300.0, 400.0)],
        SkeletonParams(),
        REFERENCE_DRIVE,
        YB171,
        NoiseModel(1e-12),
        REFERENCE_RESOLUTION,
    )
    assert not result.missing
    assert result.peak_fit.r_squared >= 0.99
    assert result.peak_fit.slope == pytest.approx(0.6, abs=0.1)


@pytest.mark.slow
def test_noise_totals_converge_under_edge_halving():
    geom = build_skeleton(
        SkeletonParams(teeth_count=2, gap_phase=0.0, strut_length=50.0 * MICRON, axial_extent=300.0 * MICRON)
    )
    noise = NoiseModel(1e-12)
    totals = [
        fixed_axis_spectral_density(mesh_and_solve(geom, Resolution(target_edge=edge, grading=2.0)), noise)
        for edge in (9.0 * MICRON, 4.5 * MICRON)
    ]
    np.testing.assert_array_less(np.abs(totals[1] / totals[0] - 1.0), 0.05)
