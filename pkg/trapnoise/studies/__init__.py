from .compare import ComparisonReport, compare
from .optimize import GapEvaluation, GapSweep, OptimizationResult, heating_objective, optimize_gaps
from .pipeline import PipelineResult, analyze_geometry, fixed_axis_spectral_density
from .scaling import FitResult, ScalingResult, distance_scaling, line_fit, power_law_exponent
from .validation import CheckResult, build_toy_quadrupole, run_validation

__all__ = [
    "CheckResult",
    "ComparisonReport",
    "FitResult",
    "GapEvaluation",
    "GapSweep",
    "OptimizationResult",
    "PipelineResult",
    "ScalingResult",
    "analyze_geometry",
    "build_toy_quadrupole",
    "compare",
    "distance_scaling",
    "fixed_axis_spectral_density",
    "heating_objective",
    "line_fit",
    "optimize_gaps",
    "power_law_exponent",
    "run_validation",
]
