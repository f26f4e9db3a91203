from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import constants
from scipy.ndimage import gaussian_filter1d

from trapnoise.constants import MODE_LABELS, PROFILE_BIN, PROFILE_SIGMA
from trapnoise.electrostatics import BemOperator, PatchCouplings, solve_patch_voltages
from trapnoise.errors import InsufficientResolutionError, ParameterError
from trapnoise.geometry import PatchSet, TrapGeometry, point_triangle_distances
from trapnoise.mesh_io import export_mesh
from trapnoise.models import IonSpecies, NoiseModel
from trapnoise.trapdynamics import SecularModes

logger = logging.getLogger(__name__)

PROFILE_SIDES = ("both", "positive", "negative")


def rate_from_spectral_density(spectral_density: float, frequency: float, species: IonSpecies) -> float:
    """Heating rate in quanta/s for field noise S_E (V^2/m^2/Hz) at secular frequency `frequency` (Hz)."""
    if not (math.isfinite(frequency) and frequency > 0):
        raise ParameterError("frequency", f"must be > 0, got {frequency!r}")
    if spectral_density < 0:
        raise ParameterError("spectral_density", "must be >= 0")
    omega = 2.0 * math.pi * frequency
    return species.charge**2 * spectral_density / (4.0 * species.mass * constants.hbar * omega)


def spectral_density(patches: PatchSet, couplings: PatchCouplings, noise: NoiseModel, frequency: float) -> float:
    values = noise.spectral_weight(frequency) * couplings.values**2 / patches.areas
    return math.fsum(values)


@dataclass(frozen=True)
class PatchHeatingRecord:
    patch_id: int
    gamma: tuple[float, float, float]
    coupling: tuple[float, float, float]
    distance_to_ion: float
    axial_coordinate: float


@dataclass(frozen=True)
class HeatingReport:
    label: str
    patches: PatchSet
    modes: SecularModes
    noise: NoiseModel
    couplings: np.ndarray
    spectral: np.ndarray
    gamma: np.ndarray
    totals: np.ndarray
    spectral_totals: np.ndarray
    metadata: Mapping[str, object] = field(default_factory=dict)

    def mode_index(self, mode: str) -> int:
        if mode not in MODE_LABELS:
            raise ParameterError("mode", f"unknown mode {mode!r}")
        return MODE_LABELS.index(mode)

    def total(self, mode: str) -> float:
        return float(self.totals[self.mode_index(mode)])

    @property
    def summed_total(self) -> float:
        return math.fsum(self.totals)

    def records(self) -> Iterator[PatchHeatingRecord]:
        for i in range(self.patches.count):
            yield PatchHeatingRecord(
                patch_id=i,
                gamma=tuple(float(v) for v in self.gamma[i]),
                coupling=tuple(float(v) for v in np.abs(self.couplings[i])),
                distance_to_ion=float(self.patches.distances[i]),
                axial_coordinate=float(self.patches.axial_offsets[i]),
            )

    def summary(self) -> dict:
        return {
            "label": self.label,
            "patch_count": self.patches.count,
            "total_area_m2": self.patches.total_area,
            "mode_frequencies_hz": {m: float(f) for m, f in zip(MODE_LABELS, self.modes.frequencies)},
            "gamma_quanta_per_s": {m: float(v) for m, v in zip(MODE_LABELS, self.totals)},
            "spectral_density_v2_per_m2_hz": {m: float(v) for m, v in zip(MODE_LABELS, self.spectral_totals)},
            "gamma_summed_quanta_per_s": self.summed_total,
            **dict(self.metadata),
        }


def _check_orthonormal(axes: np.ndarray) -> None:
    if not np.allclose(axes @ axes.T, np.eye(3), rtol=0.0, atol=1e-10):
        raise ParameterError("modes.axes", "mode axes are not orthonormal")


def per_patch_heating(
    patches: PatchSet,
    couplings: Mapping[str, PatchCouplings],
    modes: SecularModes,
    noise: NoiseModel,
    species: IonSpecies,
    label: str = "geometry",
    metadata: Mapping[str, object] | None = None,
) -> HeatingReport:
    noise.validate()
    _check_orthonormal(modes.axes)
    columns = []
    for mode in MODE_LABELS:
        if mode not in couplings:
            raise ParameterError(f"couplings.{mode}", "missing couplings for mode axis")
        coupling = couplings[mode]
        if abs(float(coupling.direction @ modes.axis(mode))) < 1.0 - 1e-9:
            raise ParameterError(f"couplings.{mode}", "coupling direction differs from the mode axis")
        columns.append(coupling.values)
    values = np.column_stack(columns)

    weights = np.array([noise.spectral_weight(f) for f in modes.frequencies])
    spectral = weights[None, :] * values**2 / patches.areas[:, None]
    prefactors = np.array([rate_from_spectral_density(1.0, f, species) for f in modes.frequencies])
    gamma = spectral * prefactors[None, :]
    totals = np.array([math.fsum(gamma[:, k]) for k in range(3)])
    spectral_totals = np.array([math.fsum(spectral[:, k]) for k in range(3)])
    logger.info(
        "%s heating totals x=%.4g y=%.4g z=%.4g quanta/s over %d patches",
        label,
        *totals,
        patches.count,
    )
    return HeatingReport(
        label=label,
        patches=patches,
        modes=modes,
        noise=noise,
        couplings=values,
        spectral=spectral,
        gamma=gamma,
        totals=totals,
        spectral_totals=spectral_totals,
        metadata=dict(metadata or {}),
    )


def fraction_within(report: HeatingReport, mode: str, radius: float) -> float:
    k = report.mode_index(mode)
    total = report.totals[k]
    if total == 0.0:
        return 0.0
    mask = report.patches.distances <= radius
    return math.fsum(report.gamma[mask, k]) / total


def cumulative_curve(report: HeatingReport, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Patch distances in ascending order and the cumulative fraction of the mode total."""
    k = report.mode_index(mode)
    order = np.argsort(report.patches.distances, kind="stable")
    distances = report.patches.distances[order]
    total = report.totals[k]
    if total == 0.0:
        return distances, np.zeros_like(distances)
    return distances, np.cumsum(report.gamma[order, k]) / total


@dataclass(frozen=True)
class AxialProfile:
    mode: str
    side: str
    bin_centers: np.ndarray
    gamma_per_m: np.ndarray
    smoothed: np.ndarray
    peak: float
    raw_peak: float
    fwhm: float

    HEADER = ("z_offset_m", "gamma_per_m", "smoothed")

    @property
    def peak_index(self) -> int:
        return int(np.argmax(self.smoothed))

    def table(self) -> np.ndarray:
        return np.column_stack((self.bin_centers, self.gamma_per_m, self.smoothed))


def _half_maximum_width(centers: np.ndarray, curve: np.ndarray, peak: int) -> float:
    half = 0.5 * curve[peak]
    left = centers[0] - 0.5 * (centers[1] - centers[0])
    for i in range(peak, 0, -1):
        if curve[i - 1] < half:
            left = np.interp(half, [curve[i - 1], curve[i]], [centers[i - 1], centers[i]])
            break
    right = centers[-1]
    for i in range(peak, curve.size - 1):
        if curve[i + 1] < half:
            right = np.interp(half, [curve[i + 1], curve[i]], [centers[i + 1], centers[i]])
            break
    return float(right - left)


def axial_profile(
    report: HeatingReport,
    mode: str,
    electrodes: Sequence[str] | None = None,
    side: str = "both",
    bin_width: float = PROFILE_BIN,
    sigma: float = PROFILE_SIGMA,
) -> AxialProfile:
    if side not in PROFILE_SIDES:
        raise ParameterError("side", f"must be one of {PROFILE_SIDES}")
    k = report.mode_index(mode)
    offsets = report.patches.axial_offsets
    mask = np.ones(offsets.shape, dtype=bool)
    if electrodes:
        unknown = set(electrodes) - set(report.patches.electrode_ids)
        if unknown:
            raise ParameterError("electrodes", f"unknown electrode {sorted(unknown)[0]!r}")
        mask &= report.patches.mask_for(electrodes)
    if side == "positive":
        mask &= offsets > 0
    elif side == "negative":
        mask &= offsets < 0

    distance = np.abs(offsets[mask])
    weights = report.gamma[mask, k]
    if distance.size == 0:
        raise InsufficientResolutionError("no patches selected for the axial profile")
    index = np.floor(distance / bin_width).astype(np.int64)
    sums = np.bincount(index, weights=weights)
    counts = np.bincount(index)
    if np.count_nonzero(counts) < 3:
        raise InsufficientResolutionError(
            f"axial profile has {np.count_nonzero(counts)} nonempty bins, need at least 3"
        )
    centers = (np.arange(sums.size) + 0.5) * bin_width
    per_m = sums / bin_width
    smoothed = gaussian_filter1d(per_m, sigma / bin_width, mode="reflect")
    peak = int(np.argmax(smoothed))
    return AxialProfile(
        mode=mode,
        side=side,
        bin_centers=centers,
        gamma_per_m=per_m,
        smoothed=smoothed,
        peak=float(centers[peak]),
        raw_peak=float(centers[int(np.argmax(per_m))]),
        fwhm=_half_maximum_width(centers, smoothed, peak),
    )


def heatmap_scalars(report: HeatingReport, mode: str) -> np.ndarray:
    values = report.gamma[:, report.mode_index(mode)]
    peak = float(values.max()) if values.size else 0.0
    return values / peak if peak > 0 else np.zeros_like(values)


def patch_geometry(patches: PatchSet, label: str = "patches") -> TrapGeometry:
    return TrapGeometry(
        mesh=patches.to_mesh(),
        electrodes=patches.electrodes,
        ion_nominal=patches.ion,
        axial_direction=patches.axial_direction,
        label=label,
    )


def export_heatmap(report: HeatingReport, mode: str, path: str | Path) -> Path:
    return export_mesh(patch_geometry(report.patches, report.label), path, heatmap_scalars(report, mode))


@dataclass(frozen=True)
class FieldVectorSamples:
    patch_index: int
    points: np.ndarray
    fields: np.ndarray
    near_surface: np.ndarray
    ion: np.ndarray
    ion_field: np.ndarray
    axial_direction: np.ndarray

    HEADER = ("x_m", "y_m", "z_m", "ex_v_per_m", "ey_v_per_m", "ez_v_per_m", "near_surface", "is_ion")

    @property
    def axial_fraction(self) -> float:
        """Share of the ion field along the trap axis."""
        norm = float(np.linalg.norm(self.ion_field))
        return abs(float(self.ion_field @ self.axial_direction)) / norm if norm > 0 else 0.0

    def table(self) -> np.ndarray:
        rows = [np.concatenate((self.ion, self.ion_field, [0.0, 1.0]))]
        for point, value, flag in zip(self.points, self.fields, self.near_surface):
            rows.append(np.concatenate((point, value, [float(flag), 0.0])))
        return np.vstack(rows)


def box_grid(lower, upper, counts) -> np.ndarray:
    axes = [np.linspace(lo, hi, int(n)) for lo, hi, n in zip(lower, upper, counts)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def export_field_vectors(op: BemOperator, patch_index: int, points, voltage: float = 1.0) -> FieldVectorSamples:
    """Field of one patch held at `voltage` (others grounded) on sample points plus the ion."""
    patches = op.patches
    if not 0 <= patch_index < patches.count:
        raise ParameterError("patch_index", f"{patch_index} outside 0..{patches.count - 1}")
    grid = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    voltages = np.zeros(patches.count)
    voltages[patch_index] = voltage
    solution = solve_patch_voltages(op, voltages)

    near = np.zeros(grid.shape[0], dtype=bool)
    values = np.empty_like(grid)
    for i, point in enumerate(grid):
        clearance = point_triangle_distances(point, patches.triangles)
        nearest = int(np.argmin(clearance))
        near[i] = clearance[nearest] < 0.1 * patches.diameters[nearest]
        values[i] = solution.field_at(point) if clearance[nearest] > 0 else np.nan
    if near.any():
        logger.warning("%d of %d field samples lie close to an electrode surface", int(near.sum()), grid.shape[0])
    return FieldVectorSamples(
        patch_index, grid, values, near, patches.ion.copy(), solution.field_at(patches.ion), patches.axial_direction.copy()
    )
