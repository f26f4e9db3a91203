from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

from joblib import Parallel, delayed
from scipy.optimize import minimize_scalar

from trapnoise.constants import DEFAULT_AXIAL_FREQUENCY, MICRON
from trapnoise.errors import ParameterError
from trapnoise.geometry import build_skeleton
from trapnoise.models import DriveConfig, IonSpecies, NoiseModel, Resolution, SkeletonParams
from trapnoise.studies.compare import run_tagged

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GapEvaluation:
    axial_total: float
    radial_total: float
    surface_area: float


@dataclass(frozen=True)
class GapSweep:
    tooth_widths: Sequence[float]
    gap_phases: Sequence[float] = (0.5,)
    refine_tolerance: float | None = 0.5 * MICRON

    def validate(self) -> None:
        if not self.tooth_widths or not self.gap_phases:
            raise ParameterError("study.sweep", "empty sweep")
        if any(w <= 0 for w in self.tooth_widths):
            raise ParameterError("study.tooth_widths_um", "widths must be positive")
        if not all(math.isfinite(p) for p in self.gap_phases):
            raise ParameterError("study.gap_phases", "phases must be finite")


@dataclass(frozen=True)
class GridPoint:
    tooth_width: float
    gap_phase: float
    evaluation: GapEvaluation


@dataclass(frozen=True)
class OptimizationResult:
    baseline: SkeletonParams
    baseline_evaluation: GapEvaluation
    grid: tuple[GridPoint, ...]
    refined: tuple[GridPoint, ...]
    best: SkeletonParams
    best_evaluation: GapEvaluation
    improved: bool = field(default=False)

    @property
    def improvement(self) -> float:
        """Fractional decrease of the axial objective against the baseline."""
        base = self.baseline_evaluation.axial_total
        return 0.0 if base == 0 else 1.0 - self.best_evaluation.axial_total / base

    @property
    def radial_change(self) -> float:
        base = self.baseline_evaluation.radial_total
        return 0.0 if base == 0 else self.best_evaluation.radial_total / base - 1.0

    @property
    def area_change(self) -> float:
        return self.best_evaluation.surface_area / self.baseline_evaluation.surface_area - 1.0

    def summary(self) -> dict:
        def point(p: GridPoint) -> dict:
            return {
                "tooth_width_m": p.tooth_width,
                "gap_phase": p.gap_phase,
                "axial_gamma": p.evaluation.axial_total,
                "radial_gamma": p.evaluation.radial_total,
                "surface_area_m2": p.evaluation.surface_area,
            }

        return {
            "baseline": {
                "tooth_width_m": self.baseline.tooth_width,
                "gap_phase": self.baseline.gap_phase,
                "axial_gamma": self.baseline_evaluation.axial_total,
                "radial_gamma": self.baseline_evaluation.radial_total,
                "surface_area_m2": self.baseline_evaluation.surface_area,
            },
            "best": {
                "tooth_width_m": self.best.tooth_width,
                "gap_phase": self.best.gap_phase,
                "axial_gamma": self.best_evaluation.axial_total,
                "radial_gamma": self.best_evaluation.radial_total,
                "surface_area_m2": self.best_evaluation.surface_area,
            },
            "improved": self.improved,
            "axial_improvement": self.improvement,
            "radial_change": self.radial_change,
            "area_change": self.area_change,
            "grid": [point(p) for p in self.grid],
            "refined": [point(p) for p in self.refined],
        }


def heating_objective(
    drive: DriveConfig,
    species: IonSpecies,
    noise: NoiseModel,
    resolution: Resolution,
    axial_frequency: float | None = DEFAULT_AXIAL_FREQUENCY,
) -> Callable[[SkeletonParams], GapEvaluation]:
    def evaluate(params: SkeletonParams) -> GapEvaluation:
        geom = build_skeleton(params)
        result = run_tagged(
            geom,
            drive=drive,
            species=species,
            noise=noise,
            resolution=resolution,
            axial_frequency=axial_frequency,
        )
        report = result.report
        return GapEvaluation(report.total("z"), report.total("x") + report.total("y"), geom.surface_area)

    return evaluate


def _key(width: float, phase: float) -> tuple[int, int]:
    # nanometres and millionths of a period; finer differences are not new designs
    return round(width * 1e9), round(phase * 1e6)


def optimize_gaps(
    base: SkeletonParams,
    sweep: GapSweep,
    evaluate: Callable[[SkeletonParams], GapEvaluation],
) -> OptimizationResult:
    """Grid search over tooth width and gap phase, then golden-section refinement of the width."""
    sweep.validate()
    base.validate()
    cache: dict[tuple[int, int], GapEvaluation] = {}

    def params_for(width: float, phase: float) -> SkeletonParams:
        return replace(base, tooth_width=float(width), gap_phase=float(phase))

    def lookup(width: float, phase: float) -> GapEvaluation:
        key = _key(width, phase)
        if key not in cache:
            cache[key] = evaluate(params_for(width, phase))
            logger.debug("tooth width %.2f um phase %.3f -> %.6g", width / MICRON, phase, cache[key].axial_total)
        return cache[key]

    baseline_eval = lookup(base.tooth_width, base.gap_phase)
    points = sorted({(float(w), float(p)) for w in sweep.tooth_widths for p in sweep.gap_phases})
    pending = [pt for pt in points if _key(*pt) not in cache]
    values = Parallel(prefer="threads")(delayed(evaluate)(params_for(w, p)) for w, p in pending)
    for (w, p), value in zip(pending, values):
        cache[_key(w, p)] = value
    grid = tuple(GridPoint(w, p, cache[_key(w, p)]) for w, p in points)
    best = min(grid, key=lambda g: (g.evaluation.axial_total, g.tooth_width, g.gap_phase))

    refined: list[GridPoint] = []
    widths = sorted({w for w, p in points if p == best.gap_phase})
    position = widths.index(best.tooth_width)
    if sweep.refine_tolerance and 0 < position < len(widths) - 1:
        lower, upper = widths[position - 1], widths[position + 1]

        def objective(width: float) -> float:
            value = lookup(width, best.gap_phase)
            refined.append(GridPoint(float(width), best.gap_phase, value))
            return value.axial_total

        try:
            minimize_scalar(
                objective,
                bracket=(lower, best.tooth_width, upper),
                method="golden",
                options={"xtol": sweep.refine_tolerance / best.tooth_width},
            )
        except ValueError as exc:
            logger.warning("skipping width refinement: %s", exc)
        on_grid = {_key(g.tooth_width, g.gap_phase) for g in grid}
        unique = {_key(p.tooth_width, p.gap_phase): p for p in refined}
        refined = sorted((p for k, p in unique.items() if k not in on_grid), key=lambda g: g.tooth_width)
        candidates = [best, *refined]
        best = min(candidates, key=lambda g: (g.evaluation.axial_total, g.tooth_width, g.gap_phase))

    improved = best.evaluation.axial_total < baseline_eval.axial_total
    if not improved:
        logger.info("no swept design beats the baseline; keeping it")
        return OptimizationResult(base, baseline_eval, grid, tuple(refined), base, baseline_eval, False)
    logger.info(
        "best tooth width %.2f um (phase %.3f): axial heating %.3f%% lower",
        best.tooth_width / MICRON,
        best.gap_phase,
        100.0 * (1.0 - best.evaluation.axial_total / baseline_eval.axial_total),
    )
    return OptimizationResult(
        base, baseline_eval, grid, tuple(refined), params_for(best.tooth_width, best.gap_phase), best.evaluation, True
    )
