from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import linregress

from trapnoise.constants import DEFAULT_AXIAL_FREQUENCY, DRIVE_POLICIES, MICRON, STABILITY_THRESHOLD
from trapnoise.errors import InsufficientResolutionError, NumericalError, ParameterError
from trapnoise.geometry import build_skeleton
from trapnoise.heating import axial_profile
from trapnoise.models import DriveConfig, IonSpecies, NoiseModel, Resolution, SkeletonParams
from trapnoise.studies.compare import run_tagged

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    x: np.ndarray
    y: np.ndarray
    stderr: float = float("nan")

    def summary(self, unit_scale: float = 1.0, unit: str = "m") -> dict:
        return {
            "slope": self.slope,
            f"intercept_{unit}": self.intercept / unit_scale,
            "r_squared": self.r_squared,
            "slope_stderr": self.stderr,
            "points": [[float(a) / unit_scale, float(b) / unit_scale] for a, b in zip(self.x, self.y)],
        }


def line_fit(x, y) -> FitResult:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size < 3:
        raise InsufficientResolutionError(f"need at least 3 points for a fit, got {x.size}")
    fit = linregress(x, y)
    return FitResult(float(fit.slope), float(fit.intercept), float(fit.rvalue**2), x, y, float(fit.stderr))


def power_law_exponent(distances, values) -> float:
    """alpha in values ~ distances**(-alpha) from a log-log line fit."""
    return -line_fit(np.log(distances), np.log(values)).slope


def leave_one_out_spread(fit: FitResult) -> float:
    """Largest slope change when any single point is dropped."""
    if fit.x.size < 4:
        return float("nan")
    slopes = [linregress(np.delete(fit.x, i), np.delete(fit.y, i)).slope for i in range(fit.x.size)]
    return float(np.max(np.abs(np.asarray(slopes) - fit.slope)))


@dataclass(frozen=True)
class ScalingPoint:
    distance: float
    peak: float
    rf_frequency: float
    radial_spectral_density: float
    radial_gamma: float


@dataclass(frozen=True)
class ScalingResult:
    peak_fit: FitResult
    alpha: float
    alpha_gamma: float
    slope_spread: float
    points: tuple[ScalingPoint, ...]
    missing: tuple[float, ...]
    policy: str

    def summary(self) -> dict:
        return {
            "policy": self.policy,
            "peak_fit": self.peak_fit.summary(MICRON, "um"),
            "alpha_spectral_density": self.alpha,
            "alpha_gamma": self.alpha_gamma,
            "leave_one_out_slope_spread": self.slope_spread,
            "missing_distances_um": [d / MICRON for d in self.missing],
            "points": [
                {
                    "distance_um": p.distance / MICRON,
                    "peak_um": p.peak / MICRON,
                    "rf_frequency_hz": p.rf_frequency,
                    "radial_spectral_density": p.radial_spectral_density,
                    "radial_gamma": p.radial_gamma,
                }
                for p in self.points
            ],
        }


def _scaling_point(
    distance: float,
    template: SkeletonParams,
    drive: DriveConfig,
    species: IonSpecies,
    noise: NoiseModel,
    resolution: Resolution,
    policy: str,
    axial_frequency: float | None,
) -> ScalingPoint | None:
    params = replace(template, opposing_distance=2.0 * distance)
    try:
        result = run_tagged(
            build_skeleton(params),
            drive=drive,
            species=species,
            noise=noise,
            resolution=resolution,
            axial_frequency=axial_frequency,
            target_ratio=STABILITY_THRESHOLD if policy == "constant_ratio" else None,
        )
        profile = axial_profile(result.report, "z")
    except NumericalError as exc:
        logger.warning("distance %.1f um dropped from the fit: %s", distance / MICRON, exc)
        return None
    report = result.report
    return ScalingPoint(
        distance=distance,
        peak=profile.peak,
        rf_frequency=result.drive.rf_frequency,
        radial_spectral_density=float(report.spectral_totals[0] + report.spectral_totals[1]),
        radial_gamma=report.total("x") + report.total("y"),
    )


def distance_scaling(
    distances: Sequence[float],
    template: SkeletonParams,
    drive: DriveConfig,
    species: IonSpecies,
    noise: NoiseModel,
    resolution: Resolution,
    policy: str = "constant_ratio",
    axial_frequency: float | None = DEFAULT_AXIAL_FREQUENCY,
) -> ScalingResult:
    values = sorted(float(d) for d in distances)
    if len(values) < 4:
        raise ParameterError("study.distances_um", "need at least 4 distances")
    if values[-1] < 2.0 * values[0]:
        raise ParameterError("study.distances_um", "distances must span at least a factor of 2")
    if policy not in DRIVE_POLICIES:
        raise ParameterError("study.drive_policy", f"must be one of {sorted(DRIVE_POLICIES)}")

    results = Parallel(prefer="threads")(
        delayed(_scaling_point)(d, template, drive, species, noise, resolution, policy, axial_frequency)
        for d in values
    )
    points = tuple(p for p in results if p is not None)
    missing = tuple(d for d, p in zip(values, results) if p is None)
    if len(points) < 3:
        raise InsufficientResolutionError(f"only {len(points)} distances produced a peak, need 3")

    d = np.array([p.distance for p in points])
    fit = line_fit(d, [p.peak for p in points])
    result = ScalingResult(
        peak_fit=fit,
        alpha=power_law_exponent(d, [p.radial_spectral_density for p in points]),
        alpha_gamma=power_law_exponent(d, [p.radial_gamma for p in points]),
        slope_spread=leave_one_out_spread(fit),
        points=points,
        missing=missing,
        policy=policy,
    )
    logger.info(
        "peak = %.3f d %+.2f um (R^2 %.4f), alpha %.3f",
        fit.slope,
        fit.intercept / MICRON,
        fit.r_squared,
        result.alpha,
    )
    return result
