from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from joblib import Parallel, delayed
from scipy import constants
from scipy.optimize import linear_sum_assignment, minimize

from trapnoise.constants import (
    GRADIENT_TOLERANCE_EV_PER_UM,
    HESSIAN_ASYMMETRY_TOLERANCE,
    HESSIAN_STEP_FRACTION,
    MICRON,
    MODE_LABELS,
    NEWTON_ITERATIONS,
    RICHARDSON_TOLERANCE,
    SIMPLEX_ITERATIONS,
    STABILITY_THRESHOLD,
)
from trapnoise.electrostatics import BemOperator, DirichletSolution, solve_dirichlet
from trapnoise.errors import ConvergenceError, ParameterError, UnconfinedError
from trapnoise.models import DriveConfig, ElectrodeRole, IonSpecies

logger = logging.getLogger(__name__)


class FieldSource(Protocol):
    def potential_at(self, point) -> float: ...

    def field_at(self, point) -> np.ndarray: ...

    def field_gradient_at(self, point) -> np.ndarray: ...


@dataclass(frozen=True)
class QuadraticPotential:
    """phi = 1/2 (r - c)^T K (r - c); an analytic stand-in for a solved field."""

    curvature: np.ndarray
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "curvature", np.asarray(self.curvature, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))

    def potential_at(self, point) -> float:
        offset = np.asarray(point, dtype=np.float64) - self.center
        return float(0.5 * offset @ self.curvature @ offset)

    def field_at(self, point) -> np.ndarray:
        return -self.curvature @ (np.asarray(point, dtype=np.float64) - self.center)

    def field_gradient_at(self, point) -> np.ndarray:
        return -self.curvature.copy()

    def scaled(self, factor: float) -> QuadraticPotential:
        return QuadraticPotential(self.curvature * factor, self.center)


def ideal_quadrupole(r0: float, center=(0.0, 0.0, 0.0)) -> QuadraticPotential:
    """Per-volt basis potential (x^2 - y^2) / (2 r0^2)."""
    return QuadraticPotential(np.diag([1.0, -1.0, 0.0]) / r0**2, np.asarray(center))


def axial_dc_potential(kappa: float, center=(0.0, 0.0, 0.0)) -> QuadraticPotential:
    """Laplace-consistent DC well with axial curvature `kappa` (V/m^2)."""
    return QuadraticPotential(kappa * np.diag([-0.5, -0.5, 1.0]), np.asarray(center))


def mathieu_parameters(species: IonSpecies, drive: DriveConfig, r0: float, dc_voltage: float = 0.0):
    """Return (a, q, secular frequency in Hz) of the ideal quadrupole at lowest order."""
    omega = drive.angular_frequency
    q = 2.0 * species.charge * drive.rf_amplitude / (species.mass * omega**2 * r0**2)
    a = 4.0 * species.charge * dc_voltage / (species.mass * omega**2 * r0**2)
    radicand = a + q * q / 2.0
    secular = 0.5 * drive.rf_frequency * math.sqrt(radicand) if radicand > 0 else float("nan")
    return a, q, secular


@dataclass(frozen=True)
class TrapFields:
    rf: FieldSource
    dc: FieldSource | None = None
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    length_scale: float = 200.0 * MICRON
    dc_voltages: Mapping[str, float] = field(default_factory=dict)


def rf_basis_field(op: BemOperator) -> DirichletSolution:
    electrodes = op.patches.electrodes
    if not any(e.role is ElectrodeRole.RF for e in electrodes):
        raise ParameterError("geometry.electrodes", "geometry has no RF electrode")
    voltages = {e.id: (1.0 if e.role is ElectrodeRole.RF else 0.0) for e in electrodes}
    return solve_dirichlet(op, voltages)


def dc_field(op: BemOperator, dc_voltages: Mapping[str, float]) -> DirichletSolution | None:
    voltages = {e.id: 0.0 for e in op.patches.electrodes}
    for electrode_id, value in dc_voltages.items():
        if electrode_id not in voltages:
            raise ParameterError(f"drive.dc_voltages.{electrode_id}", "no such electrode")
        if op.patches.electrodes[op.patches.electrode_ids.index(electrode_id)].role is ElectrodeRole.RF:
            raise ParameterError(f"drive.dc_voltages.{electrode_id}", "DC voltage on an RF electrode")
        voltages[electrode_id] = float(value)
    if not any(voltages.values()):
        return None
    return solve_dirichlet(op, voltages)


def endcap_ids(op: BemOperator) -> list[str]:
    return [e.id for e in op.patches.electrodes if e.role is ElectrodeRole.DC and e.id.startswith("endcap")]


def calibrate_endcaps(
    op: BemOperator,
    species: IonSpecies,
    axial_frequency: float,
    point=None,
) -> dict[str, float]:
    """Common endcap voltage giving `axial_frequency` (Hz) from the DC curvature alone."""
    ids = endcap_ids(op)
    if not ids:
        raise ParameterError("drive.axial_frequency_mhz", "geometry has no endcap electrodes")
    basis = solve_dirichlet(op, {e.id: (1.0 if e.id in ids else 0.0) for e in op.patches.electrodes})
    where = op.patches.ion if point is None else np.asarray(point, dtype=np.float64)
    axis = op.patches.axial_direction
    kappa = -float(axis @ basis.field_gradient_at(where) @ axis)
    if kappa * species.charge <= 0.0:
        raise ParameterError("drive.axial_frequency_mhz", "endcaps cannot confine this species along the axis")
    voltage = species.mass * (2.0 * math.pi * axial_frequency) ** 2 / (species.charge * kappa)
    logger.info("endcap voltage %.4f V for %.3f MHz axial frequency", voltage, axial_frequency / 1e6)
    return {electrode_id: voltage for electrode_id in ids}


def trap_fields(op: BemOperator, drive: DriveConfig, rf: DirichletSolution | None = None) -> TrapFields:
    return TrapFields(
        rf=rf_basis_field(op) if rf is None else rf,
        dc=dc_field(op, drive.dc_voltages),
        origin=op.patches.ion,
        length_scale=float(op.patches.distances.min()),
        dc_voltages=dict(drive.dc_voltages),
    )


def _rf_prefactor(drive: DriveConfig, species: IonSpecies) -> float:
    """q^2 V^2 / (4 m Omega^2) in J per (V/m)^2."""
    return species.charge**2 * drive.rf_amplitude**2 / (4.0 * species.mass * drive.angular_frequency**2)


def pseudopotential(fields: TrapFields, drive: DriveConfig, species: IonSpecies, point) -> float:
    """Time-averaged potential energy in eV."""
    x = np.asarray(point, dtype=np.float64)
    e_rf = fields.rf.field_at(x)
    energy = _rf_prefactor(drive, species) * float(e_rf @ e_rf)
    if fields.dc is not None:
        energy += species.charge * fields.dc.potential_at(x)
    return energy / constants.e


def pseudopotential_gradient(fields: TrapFields, drive: DriveConfig, species: IonSpecies, point) -> np.ndarray:
    """Analytic gradient in eV/m."""
    x = np.asarray(point, dtype=np.float64)
    e_rf = fields.rf.field_at(x)
    jac = fields.rf.field_gradient_at(x)
    grad = 2.0 * _rf_prefactor(drive, species) * (jac.T @ e_rf)
    if fields.dc is not None:
        grad = grad - species.charge * fields.dc.field_at(x)
    return grad / constants.e


def _gauss_newton_hessian(fields: TrapFields, drive: DriveConfig, species: IonSpecies, x: np.ndarray) -> np.ndarray:
    jac = fields.rf.field_gradient_at(x)
    hess = 2.0 * _rf_prefactor(drive, species) * (jac.T @ jac)
    if fields.dc is not None:
        hess = hess - species.charge * fields.dc.field_gradient_at(x)
    return 0.5 * (hess + hess.T) / constants.e


def find_center(
    fields: TrapFields,
    drive: DriveConfig,
    species: IonSpecies,
    initial_guess=None,
) -> np.ndarray:
    start = fields.origin if initial_guess is None else np.asarray(initial_guess, dtype=np.float64)
    scale_um = fields.length_scale / MICRON

    def energy(offset_um: np.ndarray) -> float:
        return pseudopotential(fields, drive, species, start + offset_um * MICRON)

    simplex = np.vstack([np.zeros(3), 0.05 * scale_um * np.eye(3)])
    coarse = minimize(
        energy,
        np.zeros(3),
        method="Nelder-Mead",
        options={"maxiter": SIMPLEX_ITERATIONS, "initial_simplex": simplex, "xatol": 1e-4, "fatol": 0.0},
    )
    x = start + coarse.x * MICRON
    logger.debug("simplex stage moved the center by %.3f um", float(np.linalg.norm(coarse.x)))

    trace: list[tuple[int, float]] = []
    for iteration in range(NEWTON_ITERATIONS):
        grad = pseudopotential_gradient(fields, drive, species, x)
        norm = float(np.linalg.norm(grad)) * MICRON
        trace.append((iteration, norm))
        if norm < GRADIENT_TOLERANCE_EV_PER_UM:
            logger.info("trap center at (%.4f, %.4f, %.4f) um", *(x / MICRON))
            return x
        step = -np.linalg.lstsq(_gauss_newton_hessian(fields, drive, species, x), grad, rcond=None)[0]
        alpha = 1.0
        while alpha > 1e-6:
            trial = x + alpha * step
            if np.linalg.norm(pseudopotential_gradient(fields, drive, species, trial)) < np.linalg.norm(grad):
                x = trial
                break
            alpha *= 0.5
        else:
            raise ConvergenceError("trapdynamics", "Newton line search stalled", trace)
    raise ConvergenceError(
        "trapdynamics", f"center search did not converge in {NEWTON_ITERATIONS} Newton steps", trace
    )


def _central_hessian(fields, drive, species, x: np.ndarray, step: float) -> np.ndarray:
    columns = []
    for axis in range(3):
        delta = np.zeros(3)
        delta[axis] = step
        plus = pseudopotential_gradient(fields, drive, species, x + delta)
        minus = pseudopotential_gradient(fields, drive, species, x - delta)
        columns.append((plus - minus) / (2.0 * step))
    return np.stack(columns, axis=1)


def pseudopotential_hessian(fields: TrapFields, drive: DriveConfig, species: IonSpecies, center) -> np.ndarray:
    """Hessian in J/m^2 from central differences of the analytic gradient."""
    x = np.asarray(center, dtype=np.float64)
    step = HESSIAN_STEP_FRACTION * fields.length_scale
    full = _central_hessian(fields, drive, species, x, step)
    half = _central_hessian(fields, drive, species, x, step / 2.0)
    scale = float(np.max(np.abs(half))) or 1.0
    asymmetry = float(np.max(np.abs(half - half.T))) / scale
    if asymmetry > HESSIAN_ASYMMETRY_TOLERANCE:
        logger.warning("Hessian asymmetry %.2e before symmetrization", asymmetry)
    mismatch = float(np.max(np.abs(full - half))) / scale
    if mismatch > RICHARDSON_TOLERANCE:
        raise ConvergenceError(
            "trapdynamics", f"Hessian changes by {mismatch:.2%} when the step is halved", [(0, mismatch)]
        )
    extrapolated = (4.0 * half - full) / 3.0
    return 0.5 * (extrapolated + extrapolated.T) * constants.e


@dataclass(frozen=True)
class SecularModes:
    center: np.ndarray
    frequencies: np.ndarray
    axes: np.ndarray
    rf_frequency: float
    labels: tuple[str, ...] = MODE_LABELS

    @property
    def stability_ratios(self) -> np.ndarray:
        return self.frequencies / self.rf_frequency

    @property
    def ratio_max(self) -> float:
        return float(np.max(self.stability_ratios))

    @property
    def stable(self) -> bool:
        return self.ratio_max <= STABILITY_THRESHOLD

    def axis(self, label: str) -> np.ndarray:
        return self.axes[self.labels.index(label)]

    def frequency(self, label: str) -> float:
        return float(self.frequencies[self.labels.index(label)])

    def to_dict(self) -> dict:
        return {
            "center_m": [float(v) for v in self.center],
            "rf_frequency_hz": float(self.rf_frequency),
            "modes": {
                label: {
                    "frequency_hz": float(self.frequencies[i]),
                    "axis": [float(v) for v in self.axes[i]],
                    "stability_ratio": float(self.stability_ratios[i]),
                }
                for i, label in enumerate(self.labels)
            },
            "ratio_max": self.ratio_max,
            "stable": self.stable,
        }


def _label_axes(vectors: np.ndarray, eigenvalues: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Assign eigenvector columns to x, y, z by largest overlap."""
    rows, cols = linear_sum_assignment(-(vectors**2))
    order = cols[np.argsort(rows)]
    axes = vectors[:, order].T.copy()
    for axis in axes:
        pivot = int(np.argmax(np.abs(axis)))
        if axis[pivot] < 0:
            axis *= -1.0
    return axes, eigenvalues[order]


def secular_modes(
    fields: TrapFields,
    drive: DriveConfig,
    species: IonSpecies,
    initial_guess=None,
) -> SecularModes:
    center = find_center(fields, drive, species, initial_guess)
    hessian = pseudopotential_hessian(fields, drive, species, center)
    eigenvalues, vectors = np.linalg.eigh(hessian)
    axes, curvatures = _label_axes(vectors, eigenvalues)
    limit = 1e-12 * float(np.max(np.abs(curvatures)))
    for label, value in zip(MODE_LABELS, curvatures):
        if value <= limit:
            raise UnconfinedError(label, float(value))
    frequencies = np.sqrt(curvatures / species.mass) / (2.0 * math.pi)
    modes = SecularModes(center, frequencies, axes, drive.rf_frequency)
    logger.info(
        "secular frequencies x=%.4f y=%.4f z=%.4f MHz (max ratio %.4f)",
        *(frequencies / 1e6),
        modes.ratio_max,
    )
    return modes


@dataclass(frozen=True)
class StabilitySweep:
    rf_frequencies: np.ndarray
    mode_frequencies: np.ndarray
    ratio_max: np.ndarray
    stable: np.ndarray
    crossings: tuple[float, ...]
    threshold: float = STABILITY_THRESHOLD

    HEADER = ("Omega_Hz", "omega_Hz_x", "omega_Hz_y", "omega_Hz_z", "ratio_max", "stable")

    def table(self) -> np.ndarray:
        return np.column_stack(
            (self.rf_frequencies, self.mode_frequencies, self.ratio_max, self.stable.astype(np.float64))
        )


def _sweep_point(fields, drive: DriveConfig, species, rf_frequency: float, guess) -> np.ndarray:
    try:
        modes = secular_modes(fields, drive.with_frequency(rf_frequency), species, guess)
    except (UnconfinedError, ConvergenceError) as exc:
        logger.warning("sweep point %.4f MHz: %s", rf_frequency / 1e6, exc)
        return np.full(3, np.nan)
    return modes.frequencies


def threshold_crossings(grid: np.ndarray, ratio: np.ndarray, threshold: float = STABILITY_THRESHOLD) -> tuple[float, ...]:
    """Drive frequencies where `ratio` meets `threshold`, linearly interpolated, each reported once."""
    crossings: list[float] = []
    for i in range(grid.size - 1):
        lo, hi = ratio[i] - threshold, ratio[i + 1] - threshold
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo * hi > 0:
            continue
        # a grid point sitting exactly on the threshold belongs to both neighbouring intervals
        point = float(grid[i]) if lo == hi else float(grid[i] + (grid[i + 1] - grid[i]) * lo / (lo - hi))
        if not crossings or not math.isclose(point, crossings[-1], rel_tol=1e-12):
            crossings.append(point)
    return tuple(crossings)


def stability_sweep(
    fields: TrapFields,
    drive: DriveConfig,
    species: IonSpecies,
    rf_frequencies: Sequence[float],
    initial_guess=None,
) -> StabilitySweep:
    grid = np.sort(np.asarray(rf_frequencies, dtype=np.float64))
    if grid.size < 2 or np.any(grid <= 0):
        raise ParameterError("study.sweep", "need at least two positive drive frequencies")
    results = Parallel(prefer="threads")(
        delayed(_sweep_point)(fields, drive, species, value, initial_guess) for value in grid
    )
    secular = np.vstack(results)
    ratio = np.max(secular, axis=1) / grid
    stable = np.isfinite(ratio) & (ratio <= STABILITY_THRESHOLD)

    crossings = threshold_crossings(grid, ratio)
    logger.info("stability sweep over %d drive frequencies, %d boundary crossings", grid.size, len(crossings))
    return StabilitySweep(grid, secular, ratio, stable, crossings)


def retune_drive_frequency(
    fields: TrapFields,
    drive: DriveConfig,
    species: IonSpecies,
    target_ratio: float = STABILITY_THRESHOLD,
    tolerance: float = 1e-4,
    max_iterations: int = 20,
) -> tuple[DriveConfig, SecularModes]:
    """Rescale the drive frequency until the largest stability ratio equals `target_ratio`."""
    current = drive
    trace: list[tuple[int, float]] = []
    for iteration in range(max_iterations):
        modes = secular_modes(fields, current, species)
        trace.append((iteration, modes.ratio_max))
        if abs(modes.ratio_max - target_ratio) <= tolerance * target_ratio:
            return current, modes
        current = current.with_frequency(current.rf_frequency * math.sqrt(modes.ratio_max / target_ratio))
    raise ConvergenceError("trapdynamics", f"drive retuning did not reach ratio {target_ratio}", trace)
