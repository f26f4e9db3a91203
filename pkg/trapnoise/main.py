from __future__ import annotations

import argparse
import copy
import logging
import sys
from collections.abc import Callable, Sequence
from dataclasses import replace

import joblib
import numpy as np

from trapnoise.artifacts import ArtifactWriter
from trapnoise.config import RunConfig, load_config, parse_document, unit_conversions, with_overrides
from trapnoise.constants import (
    APP_NAME,
    APP_VERSION,
    CONCENTRATION_RADIUS,
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    LOG_LEVELS,
    MODE_LABELS,
    STABILITY_THRESHOLD,
)
from trapnoise.electrostatics import dump_matrix
from trapnoise.env_utils import RuntimeSettings, load_dotenv, runtime_settings
from trapnoise.errors import ConfigError, NumericalError, ParameterError
from trapnoise.heating import (
    AxialProfile,
    FieldVectorSamples,
    axial_profile,
    box_grid,
    cumulative_curve,
    export_field_vectors,
    export_heatmap,
    fraction_within,
)
from trapnoise.mesh_io import export_mesh
from trapnoise.models import SkeletonParams
from trapnoise.studies import (
    GapSweep,
    analyze_geometry,
    compare,
    distance_scaling,
    heating_objective,
    optimize_gaps,
    run_validation,
)
from trapnoise.studies.pipeline import PipelineResult, mesh_and_solve, resolve_drive
from trapnoise.trapdynamics import rf_basis_field, secular_modes, stability_sweep, trap_fields

logger = logging.getLogger(__name__)


def _run_settings(config: RunConfig, settings: RuntimeSettings) -> RunConfig:
    """Environment overrides for solver limits; config values apply when the variable is unset."""
    resolution = config.resolution
    document = copy.deepcopy(config.document)
    if settings.dense_limit is not None:
        resolution = replace(resolution, dense_limit=settings.dense_limit)
        document["solver"]["dense_limit"] = settings.dense_limit
    if settings.memory_cap_gb is not None:
        resolution = replace(resolution, memory_cap_gb=settings.memory_cap_gb)
        document["solver"]["memory_cap_gb"] = settings.memory_cap_gb
    return replace(config, resolution=resolution, document=document)


def _writer(config: RunConfig, command: str) -> ArtifactWriter:
    return ArtifactWriter(
        config.output.dir,
        command,
        config=config.document,
        config_sections=config.present,
        unit_conversions=unit_conversions(),
        seed=config.seed,
    )


def _analyze(config: RunConfig, geom=None) -> PipelineResult:
    geom = config.geometry.build() if geom is None else geom
    return analyze_geometry(
        geom,
        drive=config.drive,
        species=config.species,
        noise=config.noise,
        resolution=config.resolution,
        axial_frequency=config.axial_frequency,
    )


def _write_profiles(writer: ArtifactWriter, result: PipelineResult, config: RunConfig) -> list[AxialProfile]:
    electrodes = list(config.study.profile_electrodes) or None
    profiles = []
    for mode in MODE_LABELS:
        profile = axial_profile(result.report, mode, electrodes=electrodes)
        writer.write_csv(f"profile_{mode}.csv", AxialProfile.HEADER, profile.table())
        profiles.append(profile)
    return profiles


def _field_vectors(writer: ArtifactWriter, result: PipelineResult, config: RunConfig) -> dict:
    """Field maps of the patch nearest the ion and of the strongest axial-heating patch."""
    report = result.report
    ion = result.modes.center
    extent = config.study.field_vector_extent
    n = config.study.field_vector_points
    lower = ion - extent
    upper = ion + extent
    lower[1] = upper[1] = ion[1]
    points = box_grid(lower, upper, (n, 1, n))
    picks = {
        "nearest": int(np.argmin(result.patches.distances)),
        "hotspot": int(np.argmax(report.gamma[:, report.mode_index("z")])),
    }
    out = {}
    for name, index in picks.items():
        samples = export_field_vectors(result.operator, index, points)
        writer.write_csv(f"field_vectors_{name}.csv", FieldVectorSamples.HEADER, samples.table())
        out[name] = {"patch_index": index, "axial_fraction_at_ion": samples.axial_fraction}
    return out


def cmd_generate(config: RunConfig) -> int:
    geom = config.geometry.build()
    with _writer(config, "generate") as writer:
        export_mesh(geom, writer.path(f"{geom.label}.trapmesh"))
        if config.output.dump_matrix:
            op = mesh_and_solve(geom, config.resolution)
            dump_matrix(op, writer.path("influence.bemm"))
        writer.write_json(
            "geometry.json",
            {
                "label": geom.label,
                "faces": int(geom.mesh.faces.shape[0]),
                "electrodes": {e.id: e.role.value for e in geom.electrodes},
                "surface_area_m2": geom.surface_area,
                "nominal_distance_m": geom.nominal_distance,
                "min_feature_m": geom.min_feature,
            },
        )
    return EXIT_OK


def cmd_modes(config: RunConfig) -> int:
    config.require("drive", "species")
    geom = config.geometry.build()
    op = mesh_and_solve(geom, config.resolution)
    drive = resolve_drive(op, config.drive, config.species, config.axial_frequency)
    fields = trap_fields(op, drive, rf_basis_field(op))
    modes = secular_modes(fields, drive, config.species)
    grid = np.linspace(config.study.sweep_start, config.study.sweep_stop, config.study.sweep_points)
    sweep = stability_sweep(fields, drive, config.species, grid, initial_guess=modes.center)
    with _writer(config, "modes") as writer:
        writer.write_json(
            "modes.json",
            {
                "geometry": geom.label,
                "modes": modes.to_dict(),
                "dc_voltages_v": dict(sorted(drive.dc_voltages.items())),
                "stable": modes.stable,
                "threshold": STABILITY_THRESHOLD,
                "crossings_hz": list(sweep.crossings),
            },
        )
        writer.write_csv("stability_sweep.csv", sweep.HEADER, sweep.table())
        if config.output.dump_matrix:
            dump_matrix(op, writer.path("influence.bemm"))
        if config.output.plots:
            from trapnoise.plots import plot_stability_sweep

            plot_stability_sweep(sweep, writer.path("stability_sweep.png"))
    return EXIT_OK


def cmd_heat(config: RunConfig) -> int:
    config.require("drive", "species", "noise")
    result = _analyze(config)
    report = result.report
    with _writer(config, "heat") as writer:
        for mode in MODE_LABELS:
            export_heatmap(report, mode, writer.path(f"heatmap_{mode}.trapmesh"))
        rows = [
            (r.patch_id, *centroid, area, r.distance_to_ion, r.axial_coordinate, *r.gamma)
            for r, centroid, area in zip(report.records(), report.patches.centroids, report.patches.areas)
        ]
        writer.write_csv(
            "patches.csv",
            ("patch_id", "cx_m", "cy_m", "cz_m", "area_m2", "distance_m", "axial_m", "gamma_x", "gamma_y", "gamma_z"),
            np.array(rows, dtype=np.float64).reshape(-1, 10),
        )
        curves = {}
        for mode in MODE_LABELS:
            distances, fraction = cumulative_curve(report, mode)
            curves[mode] = (distances, fraction)
            writer.write_csv(f"cumulative_{mode}.csv", ("distance_m", "fraction"), np.column_stack((distances, fraction)))
        profiles = _write_profiles(writer, result, config)
        vectors = _field_vectors(writer, result, config)
        summary = report.summary()
        summary["fraction_within_500um"] = {m: fraction_within(report, m, CONCENTRATION_RADIUS) for m in MODE_LABELS}
        summary["profile_peaks_m"] = {p.mode: p.peak for p in profiles}
        summary["field_vectors"] = vectors
        writer.write_json("heating.json", summary)
        if config.output.dump_matrix:
            dump_matrix(result.operator, writer.path("influence.bemm"))
        if config.output.plots:
            from trapnoise.plots import plot_axial_profiles, plot_cumulative

            plot_axial_profiles(profiles, writer.path("profiles.png"))
            plot_cumulative(curves, writer.path("cumulative.png"))
    return EXIT_OK


def cmd_compare(config: RunConfig) -> int:
    config.require("drive", "species", "noise")
    baseline = config.study.baseline.build()
    candidate = config.geometry.build()
    report = compare(
        baseline,
        candidate,
        drive=config.drive,
        species=config.species,
        noise=config.noise,
        resolution=config.resolution,
        axial_frequency=config.axial_frequency,
    )
    with _writer(config, "compare") as writer:
        writer.write_json("comparison.json", report.summary())
        for tag, heating in (("baseline", report.baseline), ("candidate", report.candidate)):
            for mode in MODE_LABELS:
                export_heatmap(heating, mode, writer.path(f"{tag}/heatmap_{mode}.trapmesh"))
    return EXIT_OK


def cmd_optimize(config: RunConfig) -> int:
    config.require("drive", "species", "noise")
    if config.geometry.type != "skeleton":
        raise ConfigError("geometry.type", "optimize needs a skeleton geometry")
    base = config.geometry.build().params
    if not isinstance(base, SkeletonParams):
        raise ParameterError("geometry", "optimize needs skeleton parameters to vary the teeth")
    sweep = GapSweep(config.study.tooth_widths, config.study.gap_phases, config.study.refine_tolerance)
    evaluate = heating_objective(
        config.drive, config.species, config.noise, config.resolution, config.axial_frequency
    )
    result = optimize_gaps(base, sweep, evaluate)
    with _writer(config, "optimize") as writer:
        writer.write_json("optimization.json", result.summary())
        writer.write_csv(
            "grid.csv",
            ("tooth_width_m", "gap_phase", "axial_total", "radial_total", "surface_area_m2"),
            np.array(
                [
                    (g.tooth_width, g.gap_phase, g.evaluation.axial_total, g.evaluation.radial_total, g.evaluation.surface_area)
                    for g in (*result.grid, *result.refined)
                ]
            ).reshape(-1, 5),
        )
    return EXIT_OK


def cmd_scaling(config: RunConfig) -> int:
    config.require("drive", "species", "noise")
    if config.geometry.type != "skeleton":
        raise ConfigError("geometry.type", "scaling needs a skeleton geometry")
    template = config.geometry.build().params
    result = distance_scaling(
        config.study.distances,
        template,
        drive=config.drive,
        species=config.species,
        noise=config.noise,
        resolution=config.resolution,
        policy=config.study.drive_policy,
        axial_frequency=config.axial_frequency,
    )
    with _writer(config, "scaling") as writer:
        writer.write_json("scaling.json", result.summary())
        writer.write_csv(
            "scaling.csv",
            ("distance_m", "peak_m", "rf_frequency_hz", "radial_spectral_density", "radial_gamma"),
            np.array(
                [(p.distance, p.peak, p.rf_frequency, p.radial_spectral_density, p.radial_gamma) for p in result.points]
            ).reshape(-1, 5),
        )
    return EXIT_OK


def cmd_validate(config: RunConfig) -> int:
    checks = run_validation(
        seed=config.seed,
        sphere_subdivisions=config.study.sphere_subdivisions,
        include_disc=config.study.include_disc,
    )
    passed = all(check.passed for check in checks)
    with _writer(config, "validate") as writer:
        writer.write_json("validation.json", {"passed": passed, "checks": [c.to_dict() for c in checks]})
    failed = [c.name for c in checks if not c.passed]
    if failed:
        print(f"{APP_NAME}: validation failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


COMMANDS: dict[str, Callable[[RunConfig], int]] = {
    "generate": cmd_generate,
    "modes": cmd_modes,
    "heat": cmd_heat,
    "compare": cmd_compare,
    "optimize": cmd_optimize,
    "scaling": cmd_scaling,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=APP_NAME, description="Patch-potential heating of trapped ions.")
    parser.add_argument("--version", action="version", version=f"{APP_NAME} {APP_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", required=name != "validate", help="TOML run config or a previous manifest.json")
        sub.add_argument("--out", help="output directory (overrides output.dir)")
        sub.add_argument("--threads", type=int, help="worker thread cap")
        sub.add_argument("--resolution-um", type=float, help="target patch edge in um")
        sub.add_argument("--log-level", choices=LOG_LEVELS, help="log verbosity")
        sub.add_argument("--plots", action="store_true", help="also write PNG plots")
        sub.add_argument("--dump-matrix", action="store_true", help="also write the influence matrix")
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    load_dotenv()
    settings = runtime_settings()
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level or settings.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    threads = args.threads if args.threads is not None else settings.threads
    try:
        if args.config is None:
            config = parse_document({"geometry": {"type": "disc"}})
        else:
            config = load_config(args.config)
        config = _run_settings(config, settings)
        config = with_overrides(
            config,
            out=args.out,
            resolution_um=args.resolution_um,
            plots=args.plots,
            dump_matrix=args.dump_matrix,
        )
        if threads is not None and threads < 1:
            raise ConfigError("--threads", "must be >= 1")
        with joblib.parallel_config(backend="threading", n_jobs=threads or -1):
            code = COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"{APP_NAME}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"{APP_NAME}: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if code == EXIT_OK:
        print(f"{APP_NAME}: {args.command} done, artifacts in {config.output.dir}")
    return code


def main() -> None:
    sys.exit(run())
