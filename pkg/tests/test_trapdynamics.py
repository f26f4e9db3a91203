from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import constants

from trapnoise.constants import MHZ, MICRON
from trapnoise.errors import ParameterError, UnconfinedError
from trapnoise.models import YB171, DriveConfig
from trapnoise.studies.validation import check_ideal_quadrupole
from trapnoise.trapdynamics import (
    QuadraticPotential,
    StabilitySweep,
    TrapFields,
    axial_dc_potential,
    calibrate_endcaps,
    dc_field,
    ideal_quadrupole,
    mathieu_parameters,
    pseudopotential,
    pseudopotential_gradient,
    retune_drive_frequency,
    secular_modes,
    stability_sweep,
    threshold_crossings,
    trap_fields,
)

R0 = 200.0 * MICRON
AXIAL = 0.5 * MHZ


@pytest.fixture
def ideal_fields():
    kappa = YB171.mass * (2.0 * math.pi * AXIAL) ** 2 / YB171.charge
    return TrapFields(rf=ideal_quadrupole(R0), dc=axial_dc_potential(kappa), length_scale=R0)


def test_mathieu_q_for_reference_drive():
    a, q, secular = mathieu_parameters(YB171, DriveConfig(50.0, 11.0 * MHZ), R0)
    assert a == 0.0
    assert q == pytest.approx(0.295, rel=5e-3)
    assert secular == pytest.approx(11.0 * MHZ * q / (2.0 * math.sqrt(2.0)), rel=1e-12)


def test_ideal_quadrupole_oracle_passes():
    results = check_ideal_quadrupole()
    assert all(r.passed for r in results), [r.to_dict() for r in results]


def test_axial_dc_well_is_laplace_consistent():
    well = axial_dc_potential(3.0e6)
    assert np.trace(well.curvature) == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(well.field_gradient_at([0, 0, 0]), -well.curvature)


def test_analytic_gradient_matches_finite_differences(toy_operator, toy_drive):
    fields = trap_fields(toy_operator, toy_drive)
    point = np.array([4.0, -3.0, 6.0]) * MICRON
    step = 0.05 * MICRON
    numeric = np.array(
        [
            (pseudopotential(fields, toy_drive, YB171, point + step * e) - pseudopotential(fields, toy_drive, YB171, point - step * e))
            / (2.0 * step)
            for e in np.eye(3)
        ]
    )
    analytic = pseudopotential_gradient(fields, toy_drive, YB171, point)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-6 * np.linalg.norm(analytic))


def test_quadrupole_without_dc_is_unconfined_along_axis():
    fields = TrapFields(rf=ideal_quadrupole(R0), length_scale=R0)
    with pytest.raises(UnconfinedError) as info:
        secular_modes(fields, DriveConfig(50.0, 11.0 * MHZ), YB171)
    assert info.value.axis == "z"


def test_pseudopotential_energy_of_ideal_trap(ideal_fields):
    drive = DriveConfig(50.0, 11.0 * MHZ)
    modes = secular_modes(ideal_fields, drive, YB171)
    offset = np.array([5.0, 0.0, 0.0]) * MICRON
    omega = 2.0 * math.pi * modes.frequency("x")
    expected = 0.5 * YB171.mass * omega**2 * offset[0] ** 2 / constants.e
    assert pseudopotential(ideal_fields, drive, YB171, offset) == pytest.approx(expected, rel=1e-9)


def test_toy_trap_modes(toy_result):
    modes = toy_result.modes
    assert np.linalg.norm(modes.center) < 1.0 * MICRON
    # mirror symmetry in x, y and z keeps the Hessian diagonal
    assert np.all(np.abs(np.diag(modes.axes)) > 0.99)
    assert np.all(modes.frequencies > 0)
    payload = modes.to_dict()
    assert set(payload["modes"]) == {"x", "y", "z"}
    assert payload["stable"] == modes.stable


def test_stability_sweep_finds_single_boundary(ideal_fields):
    drive = DriveConfig(50.0, 11.0 * MHZ)
    sweep = stability_sweep(ideal_fields, drive, YB171, np.array([30.0, 5.0, 7.0, 9.0]) * MHZ)
    assert isinstance(sweep, StabilitySweep)
    np.testing.assert_allclose(sweep.rf_frequencies, np.array([5.0, 7.0, 9.0, 30.0]) * MHZ)
    assert sweep.stable.tolist() == [False, False, True, True]
    assert len(sweep.crossings) == 1
    assert 7.0 * MHZ < sweep.crossings[0] < 9.0 * MHZ
    assert sweep.table().shape == (4, len(StabilitySweep.HEADER))


def test_crossing_on_a_grid_point_is_reported_once():
    grid = np.array([1.0, 2.0, 3.0, 4.0]) * MHZ
    assert threshold_crossings(grid, np.array([0.30, 0.20, 0.10, 0.05])) == (2.0 * MHZ,)
    assert threshold_crossings(grid, np.array([0.30, 0.25, 0.15, 0.10])) == pytest.approx((2.5 * MHZ,))
    assert threshold_crossings(grid, np.array([0.10, 0.15, np.inf, 0.10])) == ()


def test_stability_sweep_needs_two_points(ideal_fields):
    with pytest.raises(ParameterError):
        stability_sweep(ideal_fields, DriveConfig(50.0, 11.0 * MHZ), YB171, [11.0 * MHZ])


def test_retune_reaches_target_ratio(ideal_fields):
    drive, modes = retune_drive_frequency(ideal_fields, DriveConfig(50.0, 11.0 * MHZ), YB171, target_ratio=0.2)
    assert modes.ratio_max == pytest.approx(0.2, rel=1e-3)
    assert 7.0 * MHZ < drive.rf_frequency < 9.0 * MHZ
    assert drive.rf_amplitude == 50.0


def test_calibration_needs_endcaps(toy_operator):
    with pytest.raises(ParameterError) as info:
        calibrate_endcaps(toy_operator, YB171, AXIAL)
    assert info.value.path == "drive.axial_frequency_mhz"


def test_dc_voltage_on_rf_electrode_is_rejected(toy_operator):
    with pytest.raises(ParameterError) as info:
        dc_field(toy_operator, {"rf_px": 1.0})
    assert info.value.path == "drive.dc_voltages.rf_px"
    assert dc_field(toy_operator, {"dc_py": 0.0}) is None


def test_quadratic_potential_scales():
    base = QuadraticPotential(np.eye(3))
    assert base.scaled(3.0).potential_at([1.0, 0.0, 0.0]) == pytest.approx(1.5)
