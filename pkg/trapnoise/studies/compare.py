from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from trapnoise.constants import CONCENTRATION_RADIUS, DEFAULT_AXIAL_FREQUENCY, MODE_LABELS
from trapnoise.errors import NumericalError, ParameterError, PipelineError
from trapnoise.geometry import TrapGeometry
from trapnoise.heating import HeatingReport, fraction_within
from trapnoise.models import DriveConfig, IonSpecies, NoiseModel, Resolution
from trapnoise.studies.pipeline import PipelineResult, analyze_geometry

logger = logging.getLogger(__name__)

# Required and target upper bounds on the summed candidate/baseline ratio.
RATIO_REQUIRED = 0.65
RATIO_TARGET = 0.55
CONCENTRATION_FLOOR = 0.97


@dataclass(frozen=True)
class ComparisonReport:
    baseline: HeatingReport
    candidate: HeatingReport
    ratios: np.ndarray
    summed_ratio: float
    target_edge: float

    def swapped(self) -> ComparisonReport:
        return build_comparison(self.candidate, self.baseline, self.target_edge)

    def checks(self) -> dict[str, dict]:
        out = {
            "summed_ratio_required": {
                "value": self.summed_ratio,
                "limit": RATIO_REQUIRED,
                "passed": self.summed_ratio <= RATIO_REQUIRED,
            },
            "summed_ratio_target": {
                "value": self.summed_ratio,
                "limit": RATIO_TARGET,
                "passed": self.summed_ratio <= RATIO_TARGET,
            },
        }
        for report in (self.baseline, self.candidate):
            for mode in MODE_LABELS:
                value = fraction_within(report, mode, CONCENTRATION_RADIUS)
                out[f"{report.label}_fraction_within_500um_{mode}"] = {
                    "value": value,
                    "limit": CONCENTRATION_FLOOR,
                    "passed": value >= CONCENTRATION_FLOOR,
                }
        return out

    def summary(self) -> dict:
        return {
            "baseline": self.baseline.summary(),
            "candidate": self.candidate.summary(),
            "ratio_per_mode": {m: float(r) for m, r in zip(MODE_LABELS, self.ratios)},
            "ratio_summed": self.summed_ratio,
            "target_edge_m": self.target_edge,
            "checks": self.checks(),
        }


def build_comparison(baseline: HeatingReport, candidate: HeatingReport, target_edge: float) -> ComparisonReport:
    if np.any(baseline.totals <= 0.0):
        raise ParameterError("noise.s0", "baseline heating is zero, ratios are undefined")
    ratios = candidate.totals / baseline.totals
    summed = math.fsum(candidate.totals) / math.fsum(baseline.totals)
    return ComparisonReport(baseline, candidate, ratios, summed, target_edge)


def run_tagged(geom: TrapGeometry, **kwargs) -> PipelineResult:
    try:
        return analyze_geometry(geom, **kwargs)
    except PipelineError:
        raise
    except NumericalError as exc:
        raise PipelineError(geom.label, exc) from exc


def compare(
    baseline: TrapGeometry,
    candidate: TrapGeometry,
    drive: DriveConfig,
    species: IonSpecies,
    noise: NoiseModel,
    resolution: Resolution,
    axial_frequency: float | None = DEFAULT_AXIAL_FREQUENCY,
) -> ComparisonReport:
    if baseline.nominal_distance and candidate.nominal_distance:
        mismatch = abs(candidate.nominal_distance - baseline.nominal_distance) / baseline.nominal_distance
        if mismatch > 0.01:
            logger.warning(
                "ion-electrode distances differ: %s %.1f um vs %s %.1f um",
                baseline.label,
                baseline.nominal_distance * 1e6,
                candidate.label,
                candidate.nominal_distance * 1e6,
            )
    options = dict(drive=drive, species=species, noise=noise, resolution=resolution, axial_frequency=axial_frequency)
    first = run_tagged(baseline, **options)
    second = first if candidate is baseline else run_tagged(candidate, **options)
    result = build_comparison(first.report, second.report, resolution.target_edge)
    logger.info("%s / %s summed heating ratio %.4f", candidate.label, baseline.label, result.summed_ratio)
    return result
