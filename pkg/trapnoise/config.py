from __future__ import annotations

import copy
import json
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from trapnoise.constants import DRIVE_POLICIES, GEOMETRY_TYPES, MHZ, MICRON
from trapnoise.errors import ConfigError, ParameterError
from trapnoise.geometry import TrapGeometry, build_blade, build_disc, build_skeleton
from trapnoise.mesh_io import load_mesh
from trapnoise.models import (
    BladeParams,
    DiscParams,
    DriveConfig,
    IonSpecies,
    NoiseModel,
    Resolution,
    SkeletonParams,
)

logger = logging.getLogger(__name__)

REQUIRED = object()

# Unit suffixes understood in config keys and their SI factors.
UNIT_SUFFIXES = {
    "_um": MICRON,
    "_mhz": MHZ,
    "_v": 1.0,
    "_deg": 1.0,
}

_GEOMETRY_SCHEMAS: dict[str, dict[str, tuple[Any, str]]] = {
    "skeleton": {
        "wire_diameter_um": (20.0, "float"),
        "tooth_width_um": (170.0, "float"),
        "tooth_gap_um": (9.0, "float"),
        "opposing_distance_um": (400.0, "float"),
        "teeth_count": (8, "int"),
        "strut_length_um": (150.0, "float"),
        "gap_phase": (0.5, "float"),
        "axial_extent_um": (1500.0, "float"),
    },
    "blade": {
        "ion_electrode_distance_um": (200.0, "float"),
        "blade_length_um": (2000.0, "float"),
        "blade_tip_angle_deg": (45.0, "float"),
        "blade_depth_um": (500.0, "float"),
        "endcap_separation_um": (1000.0, "float"),
        "segment_gap_um": (50.0, "float"),
    },
    "disc": {
        "radius_um": (4000.0, "float"),
        "ion_distance_um": (200.0, "float"),
        "ring_growth": (1.25, "float"),
    },
    "file": {
        "path": (REQUIRED, "str"),
        "electrode_roles": ({}, "roles"),
        "ion_um": (None, "optional_vec3"),
        "nominal_distance_um": (None, "optional_float"),
    },
}

_SECTION_SCHEMAS: dict[str, dict[str, tuple[Any, str]]] = {
    "drive": {
        "rf_amplitude_v": (150.0, "float"),
        "rf_frequency_mhz": (11.0, "float"),
        "axial_frequency_mhz": (0.5, "optional_float"),
        "dc_voltages_v": ({}, "volts"),
    },
    "species": {
        "mass_u": (171.0, "float"),
        "charge_e": (1.0, "float"),
        "label": ("171Yb+", "str"),
    },
    "noise": {
        "s0": (1e-12, "float"),
        "exponent": (0.0, "float"),
        "reference_frequency_mhz": (1.0, "float"),
    },
    "resolution": {
        "target_edge_um": (9.0, "float"),
        "grading": (0.0, "float"),
        "max_edge_scale": (20.0, "float"),
    },
    "solver": {
        "dense_limit": (20000, "int"),
        "memory_cap_gb": (8.0, "float"),
    },
    "study": {
        "baseline": ({"type": "blade"}, "geometry"),
        "sweep_start_mhz": (5.0, "float"),
        "sweep_stop_mhz": (30.0, "float"),
        "sweep_points": (26, "int"),
        "tooth_widths_um": ([150.0, 170.0, 190.0, 211.0, 230.0], "floats"),
        "gap_phases": ([0.5], "floats"),
        "refine_tolerance_um": (0.5, "optional_float"),
        "distances_um": ([100.0, 150.0, 200.0, 300.0, 400.0], "floats"),
        "drive_policy": ("constant_ratio", "str"),
        "profile_electrodes": ([], "strings"),
        "field_vector_extent_um": (150.0, "float"),
        "field_vector_points": (7, "int"),
        "sphere_subdivisions": (4, "int"),
        "include_disc": (True, "bool"),
    },
    "output": {
        "dir": ("out", "str"),
        "plots": (False, "bool"),
        "dump_matrix": (False, "bool"),
    },
}

TOP_LEVEL = {"geometry", "seed", *_SECTION_SCHEMAS}


@dataclass(frozen=True)
class GeometryConfig:
    type: str
    values: dict[str, Any]
    base_dir: Path = Path(".")

    def build(self) -> TrapGeometry:
        si = {key: to_si(key, value) for key, value in self.values.items()}
        try:
            if self.type == "skeleton":
                return build_skeleton(SkeletonParams(**{_strip_unit(k): v for k, v in si.items()}))
            if self.type == "blade":
                return build_blade(BladeParams(**{_strip_unit(k): v for k, v in si.items()}))
            if self.type == "disc":
                return build_disc(DiscParams(**{_strip_unit(k): v for k, v in si.items()}))
        except ParameterError as exc:
            raise ParameterError(f"geometry.{_config_key(exc.path, self.values)}", exc.message) from exc
        path = Path(self.values["path"])
        if not path.is_absolute():
            path = self.base_dir / path
        geom = load_mesh(path, self.values["electrode_roles"])
        if si["ion_um"] is not None:
            geom = replace(geom, ion_nominal=si["ion_um"])
        if si["nominal_distance_um"] is not None:
            geom = replace(geom, nominal_distance=si["nominal_distance_um"])
        geom.validate()
        return geom


@dataclass(frozen=True)
class StudyConfig:
    baseline: GeometryConfig
    sweep_start: float
    sweep_stop: float
    sweep_points: int
    tooth_widths: tuple[float, ...]
    gap_phases: tuple[float, ...]
    refine_tolerance: float | None
    distances: tuple[float, ...]
    drive_policy: str
    profile_electrodes: tuple[str, ...]
    field_vector_extent: float
    field_vector_points: int
    sphere_subdivisions: int
    include_disc: bool


@dataclass(frozen=True)
class OutputConfig:
    dir: Path
    plots: bool = False
    dump_matrix: bool = False


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometryConfig
    drive: DriveConfig
    axial_frequency: float | None
    species: IonSpecies
    noise: NoiseModel
    resolution: Resolution
    study: StudyConfig
    output: OutputConfig
    seed: int
    present: frozenset[str]
    document: dict[str, Any] = field(repr=False, default_factory=dict)

    def require(self, *sections: str) -> None:
        for section in sections:
            if section not in self.present:
                raise ConfigError(section, "section is required for this command")


def _strip_unit(key: str) -> str:
    for suffix in UNIT_SUFFIXES:
        if key.endswith(suffix):
            return key[: -len(suffix)]
    return key


def _config_key(field_name: str, values: dict[str, Any]) -> str:
    for key in values:
        if _strip_unit(key) == field_name or key.startswith(field_name + "_"):
            return key
    return field_name


def to_si(key: str, value: Any) -> Any:
    for suffix, factor in UNIT_SUFFIXES.items():
        if key.endswith(suffix) and factor != 1.0:
            if isinstance(value, list):
                return [float(v) * factor for v in value]
            if value is None:
                return None
            return float(value) * factor
    return value


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _coerce(value: Any, kind: str, path: str) -> Any:
    if kind == "float":
        if not _is_number(value):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if kind == "optional_float":
        return None if value is None else _coerce(value, "float", path)
    if kind == "optional_vec3":
        return None if value is None else _coerce(value, "vec3", path)
    if kind == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true or false, got {value!r}")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if kind in ("floats", "vec3"):
        if not isinstance(value, list) or not all(_is_number(v) for v in value):
            raise ConfigError(path, "expected a list of numbers")
        if kind == "vec3" and len(value) != 3:
            raise ConfigError(path, "expected three coordinates")
        return [float(v) for v in value]
    if kind == "strings":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(path, "expected a list of strings")
        return list(value)
    if kind == "volts":
        if not isinstance(value, dict) or not all(_is_number(v) for v in value.values()):
            raise ConfigError(path, "expected a table of electrode voltages")
        return {str(k): float(v) for k, v in value.items()}
    if kind == "roles":
        if not isinstance(value, dict):
            raise ConfigError(path, "expected a table of electrode roles")
        for name, role in value.items():
            if str(role).upper() not in ("RF", "DC", "GROUND"):
                raise ConfigError(f"{path}.{name}", f"unknown role {role!r}")
        return {str(k): str(v).upper() for k, v in value.items()}
    raise ConfigError(path, f"unsupported value kind {kind}")


def _resolve_table(table: Any, schema: dict[str, tuple[Any, str]], path: str) -> dict[str, Any]:
    if not isinstance(table, dict):
        raise ConfigError(path, "expected a table")
    for key in table:
        if key not in schema:
            raise ConfigError(f"{path}.{key}", "unknown key")
    out: dict[str, Any] = {}
    for key, (default, kind) in schema.items():
        value = table.get(key, copy.deepcopy(default))
        if value is REQUIRED:
            raise ConfigError(f"{path}.{key}", "missing required key")
        out[key] = _resolve_geometry(value, f"{path}.{key}") if kind == "geometry" else _coerce(value, kind, f"{path}.{key}")
    return out


def _resolve_geometry(table: Any, path: str) -> dict[str, Any]:
    if not isinstance(table, dict):
        raise ConfigError(path, "expected a table")
    kind = table.get("type")
    if kind not in GEOMETRY_TYPES:
        raise ConfigError(f"{path}.type", f"must be one of {sorted(GEOMETRY_TYPES)}, got {kind!r}")
    values = _resolve_table({k: v for k, v in table.items() if k != "type"}, _GEOMETRY_SCHEMAS[kind], path)
    return {"type": kind, **values}


def _anchor_path(resolved: dict[str, Any], base_dir: Path) -> None:
    # relative mesh paths resolve against the config file directory
    if resolved["type"] == "file":
        resolved["path"] = str((base_dir / resolved["path"]).resolve())


def _geometry_config(resolved: dict[str, Any], base_dir: Path) -> GeometryConfig:
    values = {k: v for k, v in resolved.items() if k != "type"}
    return GeometryConfig(resolved["type"], values, base_dir)


def _wrap(section: str, keys: dict[str, Any], build):
    try:
        value = build()
        value.validate()
        return value
    except ParameterError as exc:
        raise ParameterError(f"{section}.{_config_key(exc.path, keys)}", exc.message) from exc


def parse_document(document: dict[str, Any], base_dir: Path = Path(".")) -> RunConfig:
    """Strictly validate a config tree and convert it to SI run settings."""
    if not isinstance(document, dict):
        raise ConfigError("", "config root must be a table")
    for key in document:
        if key not in TOP_LEVEL:
            raise ConfigError(key, "unknown section")
    if "geometry" not in document:
        raise ConfigError("geometry", "missing required section")

    resolved: dict[str, Any] = {"geometry": _resolve_geometry(document["geometry"], "geometry")}
    for section, schema in _SECTION_SCHEMAS.items():
        resolved[section] = _resolve_table(document.get(section, {}), schema, section)
    seed = document.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed", "expected an integer")
    resolved["seed"] = seed
    _anchor_path(resolved["geometry"], base_dir)
    _anchor_path(resolved["study"]["baseline"], base_dir)

    drive_raw = resolved["drive"]
    drive = _wrap(
        "drive",
        drive_raw,
        lambda: DriveConfig(
            to_si("rf_amplitude_v", drive_raw["rf_amplitude_v"]),
            to_si("rf_frequency_mhz", drive_raw["rf_frequency_mhz"]),
            dict(drive_raw["dc_voltages_v"]),
        ),
    )
    axial = to_si("axial_frequency_mhz", drive_raw["axial_frequency_mhz"])
    if axial is not None and axial <= 0:
        raise ConfigError("drive.axial_frequency_mhz", "must be > 0")

    species_raw = resolved["species"]
    species = _wrap(
        "species",
        species_raw,
        lambda: IonSpecies.from_atomic(species_raw["mass_u"], species_raw["charge_e"], species_raw["label"]),
    )
    noise_raw = resolved["noise"]
    noise = _wrap(
        "noise",
        noise_raw,
        lambda: NoiseModel(
            noise_raw["s0"],
            noise_raw["exponent"],
            to_si("reference_frequency_mhz", noise_raw["reference_frequency_mhz"]),
        ),
    )
    res_raw = {**resolved["resolution"], **resolved["solver"]}
    resolution = _wrap(
        "resolution",
        res_raw,
        lambda: Resolution(
            target_edge=to_si("target_edge_um", res_raw["target_edge_um"]),
            grading=res_raw["grading"],
            max_edge_scale=res_raw["max_edge_scale"],
            dense_limit=res_raw["dense_limit"],
            memory_cap_gb=res_raw["memory_cap_gb"],
        ),
    )

    study_raw = resolved["study"]
    if study_raw["drive_policy"] not in DRIVE_POLICIES:
        raise ConfigError("study.drive_policy", f"must be one of {sorted(DRIVE_POLICIES)}")
    if study_raw["sweep_points"] < 2 or study_raw["sweep_stop_mhz"] <= study_raw["sweep_start_mhz"]:
        raise ConfigError("study.sweep_points", "need at least two points over an increasing range")
    if study_raw["sweep_start_mhz"] <= 0:
        raise ConfigError("study.sweep_start_mhz", "must be > 0")
    study = StudyConfig(
        baseline=_geometry_config(study_raw["baseline"], base_dir),
        sweep_start=to_si("sweep_start_mhz", study_raw["sweep_start_mhz"]),
        sweep_stop=to_si("sweep_stop_mhz", study_raw["sweep_stop_mhz"]),
        sweep_points=study_raw["sweep_points"],
        tooth_widths=tuple(to_si("tooth_widths_um", study_raw["tooth_widths_um"])),
        gap_phases=tuple(study_raw["gap_phases"]),
        refine_tolerance=to_si("refine_tolerance_um", study_raw["refine_tolerance_um"]),
        distances=tuple(to_si("distances_um", study_raw["distances_um"])),
        drive_policy=study_raw["drive_policy"],
        profile_electrodes=tuple(study_raw["profile_electrodes"]),
        field_vector_extent=to_si("field_vector_extent_um", study_raw["field_vector_extent_um"]),
        field_vector_points=study_raw["field_vector_points"],
        sphere_subdivisions=study_raw["sphere_subdivisions"],
        include_disc=study_raw["include_disc"],
    )
    output_raw = resolved["output"]
    output = OutputConfig(Path(output_raw["dir"]), output_raw["plots"], output_raw["dump_matrix"])

    return RunConfig(
        geometry=_geometry_config(resolved["geometry"], base_dir),
        drive=drive,
        axial_frequency=axial,
        species=species,
        noise=noise,
        resolution=resolution,
        study=study,
        output=output,
        seed=seed,
        present=frozenset(key for key in document if key in TOP_LEVEL),
        document=resolved,
    )


def load_config(path: str | Path) -> RunConfig:
    """Read a TOML run config, or the resolved config embedded in a previous run's manifest."""
    source = Path(path)
    try:
        raw = source.read_bytes()
    except OSError as exc:
        raise ConfigError(str(source), f"cannot read config: {exc.strerror}") from exc
    if source.suffix.lower() == ".json":
        try:
            manifest = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(source), f"invalid JSON at line {exc.lineno}") from exc
        if not isinstance(manifest, dict) or "config" not in manifest:
            raise ConfigError(str(source), "manifest has no embedded config")
        document = manifest["config"]
        present = manifest.get("config_sections")
        config = parse_document(document, source.parent)
        if isinstance(present, list):
            config = replace(config, present=frozenset(present))
        return config
    try:
        document = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(str(source), f"invalid TOML: {exc}") from exc
    logger.debug("loaded config %s", source)
    return parse_document(document, source.parent)


def with_overrides(
    config: RunConfig,
    out: str | Path | None = None,
    resolution_um: float | None = None,
    plots: bool | None = None,
    dump_matrix: bool | None = None,
) -> RunConfig:
    document = copy.deepcopy(config.document)
    output = config.output
    resolution = config.resolution
    if out is not None:
        document["output"]["dir"] = str(out)
        output = replace(output, dir=Path(out))
    if plots:
        document["output"]["plots"] = True
        output = replace(output, plots=True)
    if dump_matrix:
        document["output"]["dump_matrix"] = True
        output = replace(output, dump_matrix=True)
    if resolution_um is not None:
        if not resolution_um > 0:
            raise ConfigError("--resolution-um", "must be > 0")
        document["resolution"]["target_edge_um"] = float(resolution_um)
        resolution = replace(resolution, target_edge=float(resolution_um) * MICRON)
    return replace(config, output=output, resolution=resolution, document=document)


def unit_conversions() -> dict[str, float]:
    return {suffix.lstrip("_"): factor for suffix, factor in UNIT_SUFFIXES.items()}
