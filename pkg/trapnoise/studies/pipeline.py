from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from trapnoise.constants import DEFAULT_AXIAL_FREQUENCY, MICRON, MODE_LABELS, STABILITY_THRESHOLD
from trapnoise.electrostatics import BemOperator, assemble, patch_couplings_adjoint
from trapnoise.geometry import PatchSet, TrapGeometry, discretize
from trapnoise.heating import HeatingReport, per_patch_heating, spectral_density
from trapnoise.models import DriveConfig, IonSpecies, NoiseModel, Resolution, params_to_dict
from trapnoise.trapdynamics import (
    SecularModes,
    TrapFields,
    calibrate_endcaps,
    rf_basis_field,
    retune_drive_frequency,
    secular_modes,
    trap_fields,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineResult:
    geometry: TrapGeometry
    patches: PatchSet
    operator: BemOperator
    fields: TrapFields
    drive: DriveConfig
    modes: SecularModes
    report: HeatingReport


def mesh_and_solve(geom: TrapGeometry, resolution: Resolution) -> BemOperator:
    resolution.validate()
    patches = discretize(geom, resolution.target_edge, resolution.grading, resolution.max_edge_scale)
    return assemble(patches, memory_cap_gb=resolution.memory_cap_gb, dense_limit=resolution.dense_limit)


def resolve_drive(
    op: BemOperator,
    drive: DriveConfig,
    species: IonSpecies,
    axial_frequency: float | None,
) -> DriveConfig:
    """Explicit DC voltages win; otherwise endcaps are calibrated to `axial_frequency`."""
    if drive.dc_voltages or axial_frequency is None:
        return drive
    dc = calibrate_endcaps(op, species, axial_frequency)
    return DriveConfig(drive.rf_amplitude, drive.rf_frequency, dc)


def analyze_geometry(
    geom: TrapGeometry,
    drive: DriveConfig,
    species: IonSpecies,
    noise: NoiseModel,
    resolution: Resolution,
    axial_frequency: float | None = DEFAULT_AXIAL_FREQUENCY,
    target_ratio: float | None = None,
    op: BemOperator | None = None,
) -> PipelineResult:
    """Discretize, solve, find the modes and resolve heating per patch.

    With `target_ratio` set the drive frequency is rescaled until the largest
    stability ratio equals it before couplings are computed.
    """
    drive.validate()
    species.validate()
    noise.validate()
    operator = mesh_and_solve(geom, resolution) if op is None else op
    resolved = resolve_drive(operator, drive, species, axial_frequency)
    fields = trap_fields(operator, resolved, rf_basis_field(operator))
    if target_ratio is None:
        modes = secular_modes(fields, resolved, species)
    else:
        resolved, modes = retune_drive_frequency(fields, resolved, species, target_ratio)

    couplings = {
        label: patch_couplings_adjoint(operator, modes.center, modes.axis(label)) for label in MODE_LABELS
    }
    metadata = {
        "geometry": geom.label,
        "geometry_params": params_to_dict(geom.params) if geom.params is not None else {},
        "nominal_distance_m": geom.nominal_distance,
        "target_edge_m": resolution.target_edge,
        "grading": resolution.grading,
        "solver": operator.method,
        "rf_amplitude_v": resolved.rf_amplitude,
        "rf_frequency_hz": resolved.rf_frequency,
        "dc_voltages_v": dict(sorted(resolved.dc_voltages.items())),
        "axial_frequency_target_hz": axial_frequency if not drive.dc_voltages else None,
        "stability_ratio_max": modes.ratio_max,
        "stable": modes.ratio_max <= STABILITY_THRESHOLD,
        "center_offset_um": float(np.linalg.norm(modes.center - geom.ion_nominal) / MICRON),
    }
    report = per_patch_heating(operator.patches, couplings, modes, noise, species, geom.label, metadata)
    return PipelineResult(geom, operator.patches, operator, fields, resolved, modes, report)


def fixed_axis_spectral_density(
    op: BemOperator,
    noise: NoiseModel,
    directions=np.eye(3),
    frequency: float = 1.0e6,
) -> np.ndarray:
    """Total S_E at the nominal ion along fixed directions; needs no RF confinement."""
    out = []
    for direction in np.asarray(directions, dtype=np.float64).reshape(-1, 3):
        couplings = patch_couplings_adjoint(op, op.patches.ion, direction)
        out.append(spectral_density(op.patches, couplings, noise, frequency))
    return np.array(out)
