from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import trimesh
from scipy import constants

from trapnoise.constants import MICRON, MHZ
from trapnoise.electrostatics import (
    COULOMB,
    assemble,
    patch_couplings_adjoint,
    patch_couplings_direct,
    rms_relative_deviation,
    self_potential_integrals,
    solve_dirichlet,
)
from trapnoise.errors import TrapNoiseError
from trapnoise.geometry import MeshBuilder, TrapGeometry, TriangleMesh, build_disc, discretize, geometry_from_builder
from trapnoise.heating import rate_from_spectral_density
from trapnoise.models import DiscParams, DriveConfig, Electrode, ElectrodeRole, NoiseModel, YB171
from trapnoise.studies.pipeline import fixed_axis_spectral_density
from trapnoise.studies.scaling import power_law_exponent
from trapnoise.trapdynamics import TrapFields, axial_dc_potential, ideal_quadrupole, mathieu_parameters, secular_modes

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    expected: float
    tolerance: float
    passed: bool
    detail: str = ""

    @property
    def relative_error(self) -> float:
        return abs(self.measured - self.expected) / abs(self.expected) if self.expected else abs(self.measured)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "measured": self.measured,
            "expected": self.expected,
            "tolerance": self.tolerance,
            "relative_error": self.relative_error,
            "passed": self.passed,
            "detail": self.detail,
        }


def _relative_check(name: str, measured: float, expected: float, tolerance: float, detail: str = "") -> CheckResult:
    error = abs(measured - expected) / abs(expected)
    return CheckResult(name, float(measured), float(expected), tolerance, bool(error <= tolerance), detail)


def single_geometry(mesh: TriangleMesh, electrode: str = "body", ion=(0.0, 0.0, 0.0), label: str = "oracle") -> TrapGeometry:
    return TrapGeometry(
        mesh=mesh,
        electrodes=(Electrode(electrode, ElectrodeRole.DC),),
        ion_nominal=np.asarray(ion, dtype=np.float64),
        label=label,
    )


def sphere_geometry(radius: float, subdivisions: int) -> TrapGeometry:
    sphere = trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius)
    mesh = TriangleMesh(sphere.vertices, sphere.faces, np.zeros(len(sphere.faces), dtype=np.int64), ("body",))
    return single_geometry(mesh, label="sphere")


def plates_geometry(side: float, separation: float, cells: int) -> TrapGeometry:
    builder = MeshBuilder(max_cell=side / cells)
    half = side / 2.0
    for electrode_id, z in (("top", separation / 2.0), ("bottom", -separation / 2.0)):
        index = builder.electrode(electrode_id, ElectrodeRole.DC)
        corners = [(-half, -half, z), (half, -half, z), (half, half, z), (-half, half, z)]
        builder.add_quad(*corners, index, interior=(0.0, 0.0, 2.0 * z))
    return geometry_from_builder(builder, np.zeros(3), label="plates")


def build_toy_quadrupole(distance: float = 200.0 * MICRON, cells: int = 8) -> TrapGeometry:
    """Four square plates facing the ion; RF on x, DC on y. 2*cells^2 triangles per plate."""
    builder = MeshBuilder(max_cell=2.0 * distance / cells)
    for electrode_id, role, azimuth in (
        ("rf_px", ElectrodeRole.RF, 0.0),
        ("dc_py", ElectrodeRole.DC, 90.0),
        ("rf_nx", ElectrodeRole.RF, 180.0),
        ("dc_ny", ElectrodeRole.DC, 270.0),
    ):
        angle = math.radians(azimuth)
        radial = np.array([math.cos(angle), math.sin(angle), 0.0])
        tangent = np.array([-math.sin(angle), math.cos(angle), 0.0])
        axial = np.array([0.0, 0.0, 1.0])
        center = distance * radial
        corners = [
            center + distance * (s * tangent + t * axial) for s, t in ((-1, -1), (1, -1), (1, 1), (-1, 1))
        ]
        builder.add_quad(*corners, builder.electrode(electrode_id, role), interior=2.0 * center)
    return geometry_from_builder(builder, np.zeros(3), label="toy_quadrupole", nominal_distance=distance)


def monte_carlo_self_term(triangle, samples: int, seed: int) -> float:
    """Self-potential integral of 1/r from the centroid, Duffy-regularized and sampled."""
    tri = np.asarray(triangle, dtype=np.float64).reshape(3, 3)
    point = tri.mean(axis=0)
    rng = np.random.default_rng(seed)
    total = 0.0
    for i in range(3):
        a = tri[i] - point
        edge = tri[(i + 1) % 3] - tri[i]
        jacobian = float(np.linalg.norm(np.cross(a, edge)))
        v = rng.random(samples)
        total += jacobian * float(np.mean(1.0 / np.linalg.norm(a[None, :] + v[:, None] * edge[None, :], axis=1)))
    return total


def check_self_term(seed: int, samples: int = 1_000_000) -> CheckResult:
    triangle = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    analytic = float(self_potential_integrals(triangle[None])[0])
    sampled = monte_carlo_self_term(triangle, samples, seed)
    return _relative_check("self_term_monte_carlo", COULOMB * analytic, COULOMB * sampled, 0.005)


def check_sphere(radius: float = 1e-3, subdivisions: int = 4) -> list[CheckResult]:
    geom = sphere_geometry(radius, subdivisions)
    patches = discretize(geom, target_edge=radius)
    solution = solve_dirichlet(assemble(patches), {"body": 1.0})
    capacitance = 4.0 * math.pi * constants.epsilon_0 * radius
    detail = f"{patches.count} faces"
    return [
        _relative_check("sphere_capacitance", solution.total_charge, capacitance, 0.02, detail),
        _relative_check("sphere_exterior_potential", solution.potential_at([2.0 * radius, 0.0, 0.0]), 0.5, 0.01, detail),
    ]


def check_plates(side: float = 10e-3, separation: float = 1e-3, cells: int = 20) -> CheckResult:
    geom = plates_geometry(side, separation, cells)
    patches = discretize(geom, target_edge=side / cells)
    solution = solve_dirichlet(assemble(patches), {"top": 0.5, "bottom": -0.5})
    field = solution.field_at([0.0, 0.0, 0.0])
    return _relative_check("parallel_plate_field", abs(field[2]), 1.0 / separation, 0.02, f"{patches.count} patches")


def check_reciprocity(cells: int = 8) -> CheckResult:
    geom = build_toy_quadrupole(cells=cells)
    patches = discretize(geom, target_edge=2.0 * geom.nominal_distance / cells)
    op = assemble(patches)
    ion = patches.ion + np.array([10.0, -20.0, 15.0]) * MICRON
    direct = patch_couplings_direct(op, ion)
    worst = 0.0
    for axis in np.eye(3):
        adjoint = patch_couplings_adjoint(op, ion, axis)
        worst = max(worst, rms_relative_deviation(direct @ axis, adjoint.values))
    return CheckResult("reciprocity_rms", worst, 0.0, 0.01, worst < 0.01, f"{patches.count} patches")


def check_ideal_quadrupole(r0: float = 200.0 * MICRON) -> list[CheckResult]:
    drive = DriveConfig(50.0, 11.0 * MHZ)
    _, q, radial = mathieu_parameters(YB171, drive, r0)
    axial = 0.5 * MHZ
    kappa = YB171.mass * (2.0 * math.pi * axial) ** 2 / YB171.charge
    fields = TrapFields(rf=ideal_quadrupole(r0), dc=axial_dc_potential(kappa), length_scale=r0)
    modes = secular_modes(fields, drive, YB171)
    expected = math.sqrt(radial**2 - axial**2 / 2.0)
    return [
        _relative_check("mathieu_q", q, 0.295, 0.005),
        _relative_check("ideal_quadrupole_radial_frequency", modes.frequency("x"), expected, 0.005),
        _relative_check("ideal_quadrupole_axial_frequency", modes.frequency("z"), axial, 0.005),
    ]


def check_rate() -> CheckResult:
    return _relative_check("codata_rate", rate_from_spectral_density(1e-12, 2.24 * MHZ, YB171), 15.2, 0.01)


def check_disc_power_law(
    distances: Sequence[float] = (100e-6, 150e-6, 200e-6, 300e-6, 400e-6),
    radius: float = 8e-3,
    edge_fraction: float = 0.25,
) -> CheckResult:
    noise = NoiseModel(1.0)
    totals = []
    for distance in distances:
        geom = build_disc(DiscParams(radius=radius, ion_distance=distance))
        patches = discretize(geom, edge_fraction * distance, grading=1.0, max_edge_scale=40.0)
        totals.append(fixed_axis_spectral_density(assemble(patches), noise, [[0.0, 0.0, 1.0]])[0])
    alpha = power_law_exponent(distances, totals)
    return CheckResult("disc_power_law_alpha", alpha, 4.0, 0.3, abs(alpha - 4.0) <= 0.3, "normal field noise")


def run_validation(seed: int = 0, sphere_subdivisions: int = 4, include_disc: bool = True) -> list[CheckResult]:
    steps: list[tuple[str, Callable[[], CheckResult | list[CheckResult]]]] = [
        ("self_term", lambda: check_self_term(seed)),
        ("sphere", lambda: check_sphere(subdivisions=sphere_subdivisions)),
        ("plates", check_plates),
        ("reciprocity", check_reciprocity),
        ("ideal_quadrupole", check_ideal_quadrupole),
        ("rate", check_rate),
    ]
    if include_disc:
        steps.append(("disc", check_disc_power_law))
    results: list[CheckResult] = []
    for name, step in steps:
        try:
            outcome = step()
        except TrapNoiseError as exc:
            logger.error("oracle %s failed to run: %s", name, exc)
            results.append(CheckResult(name, float("nan"), float("nan"), float("nan"), False, str(exc)))
            continue
        for check in outcome if isinstance(outcome, list) else [outcome]:
            logger.info(
                "%s: measured %.6g expected %.6g -> %s",
                check.name,
                check.measured,
                check.expected,
                "pass" if check.passed else "FAIL",
            )
            results.append(check)
    return results
