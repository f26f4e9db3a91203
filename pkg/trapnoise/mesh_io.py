from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import trimesh

from trapnoise.constants import TRAPMESH_HEADER
from trapnoise.errors import MeshParseError, ParameterError
from trapnoise.geometry import TrapGeometry, TriangleMesh
from trapnoise.models import Electrode, ElectrodeRole

logger = logging.getLogger(__name__)

STL_SUFFIXES = {".stl", ".stla", ".stlb"}


@dataclass(frozen=True)
class MeshFile:
    geometry: TrapGeometry
    scalars: np.ndarray | None = None


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _coerce_role(value, source: str) -> ElectrodeRole:
    try:
        return ElectrodeRole(str(value).upper())
    except ValueError as exc:
        raise ParameterError(source, f"unknown electrode role {value!r}") from exc


def format_trapmesh(geom: TrapGeometry, scalars=None) -> str:
    mesh = geom.mesh
    if scalars is not None:
        scalars = np.asarray(scalars, dtype=np.float64).reshape(-1)
        if scalars.shape[0] != mesh.faces.shape[0]:
            raise ParameterError("scalars", "needs one value per face")
    lines = [TRAPMESH_HEADER]
    for electrode in geom.electrodes:
        lines.append(f"e {electrode.id} {electrode.role.value}")
    lines.append("ion " + " ".join(_fmt(c) for c in geom.ion_nominal))
    lines.append("axis " + " ".join(_fmt(c) for c in geom.axial_direction))
    if geom.nominal_distance is not None:
        lines.append(f"nominal {_fmt(geom.nominal_distance)}")
    if geom.min_feature is not None:
        lines.append(f"feature {_fmt(geom.min_feature)}")
    for vertex in mesh.vertices:
        lines.append("v " + " ".join(_fmt(c) for c in vertex))
    for index, (face, label) in enumerate(zip(mesh.faces, mesh.face_electrode)):
        line = f"f {face[0]} {face[1]} {face[2]} {mesh.electrode_ids[label]}"
        if scalars is not None:
            line += " " + _fmt(scalars[index])
        lines.append(line)
    return "\n".join(lines) + "\n"


def export_mesh(geom: TrapGeometry, path: str | Path, scalars=None) -> Path:
    target = Path(path)
    target.write_text(format_trapmesh(geom, scalars), encoding="utf-8")
    logger.debug("wrote %d faces to %s", geom.mesh.faces.shape[0], target)
    return target


def parse_trapmesh(
    text: str,
    source: str = "<memory>",
    electrode_labels: Mapping[str, str] | None = None,
) -> MeshFile:
    lines = text.splitlines()
    if not any(line.strip() for line in lines):
        raise MeshParseError(source, 1, "empty mesh file")
    first = next(i for i, line in enumerate(lines) if line.strip())
    if lines[first].strip() != TRAPMESH_HEADER:
        raise MeshParseError(source, first + 1, f"expected header {TRAPMESH_HEADER!r}")

    roles: dict[str, ElectrodeRole] = {}
    order: list[str] = []
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    labels: list[str] = []
    scalars: list[float] = []
    ion = np.zeros(3)
    axis = np.array([0.0, 0.0, 1.0])
    nominal: float | None = None
    min_feature: float | None = None

    for number, raw in enumerate(lines[first + 1 :], start=first + 2):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        kind, values = parts[0], parts[1:]
        try:
            if kind == "v":
                x, y, z = (float(v) for v in values)
                vertices.append((x, y, z))
            elif kind == "f":
                if len(values) not in (4, 5):
                    raise ValueError("face needs 'i j k electrode_id [scalar]'")
                i, j, k = (int(v) for v in values[:3])
                for index in (i, j, k):
                    if not 0 <= index < len(vertices):
                        raise ValueError(f"vertex index {index} out of range")
                faces.append((i, j, k))
                labels.append(values[3])
                if values[3] not in order:
                    order.append(values[3])
                if len(values) == 5:
                    scalars.append(float(values[4]))
            elif kind == "e":
                electrode_id, role = values
                roles[electrode_id] = _coerce_role(role, f"{source}:{number}")
                if electrode_id not in order:
                    order.append(electrode_id)
            elif kind == "ion":
                ion = np.array([float(v) for v in values], dtype=np.float64).reshape(3)
            elif kind == "axis":
                axis = np.array([float(v) for v in values], dtype=np.float64).reshape(3)
            elif kind == "nominal":
                (nominal,) = (float(v) for v in values)
            elif kind == "feature":
                (min_feature,) = (float(v) for v in values)
            else:
                raise ValueError(f"unknown record {kind!r}")
        except (ValueError, ParameterError) as exc:
            raise MeshParseError(source, number, str(exc)) from exc

    if not faces:
        raise MeshParseError(source, len(lines), "no faces")
    if scalars and len(scalars) != len(faces):
        raise MeshParseError(source, len(lines), "scalar column present on some faces only")

    for name, role in (electrode_labels or {}).items():
        roles[name] = _coerce_role(role, f"electrode_labels.{name}")
    electrodes = []
    for electrode_id in order:
        if electrode_id not in roles:
            logger.warning("%s: electrode %r has no role, treating it as GROUND", source, electrode_id)
        electrodes.append(Electrode(electrode_id, roles.get(electrode_id, ElectrodeRole.GROUND)))
    index = {electrode_id: i for i, electrode_id in enumerate(order)}
    mesh = TriangleMesh(
        np.array(vertices, dtype=np.float64),
        np.array(faces, dtype=np.int64),
        np.array([index[label] for label in labels]),
        tuple(order),
    )
    geom = TrapGeometry(
        mesh=mesh,
        electrodes=tuple(electrodes),
        ion_nominal=ion,
        axial_direction=axis,
        label=Path(source).stem or "mesh",
        nominal_distance=nominal,
        min_feature=min_feature,
    )
    return MeshFile(geom, np.array(scalars) if scalars else None)


def _non_manifold_edges(vertices: np.ndarray, faces: np.ndarray) -> int:
    _, inverse = np.unique(np.round(vertices, 12), axis=0, return_inverse=True)
    merged = inverse.reshape(-1)[faces]
    edges = np.sort(np.concatenate((merged[:, [0, 1]], merged[:, [1, 2]], merged[:, [2, 0]])), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return int(np.count_nonzero(counts > 2))


def load_stl(
    path: str | Path,
    electrode_labels: Mapping[str, str] | None = None,
    ion=(0.0, 0.0, 0.0),
    scale: float = 1.0,
) -> TrapGeometry:
    """Load an STL file; each solid becomes one electrode named after it."""
    source = Path(path)
    try:
        loaded = trimesh.load(source, process=False)
    except Exception as exc:  # noqa: BLE001
        raise MeshParseError(str(source), 0, f"unreadable STL: {exc}") from exc

    if isinstance(loaded, trimesh.Scene):
        parts = list(loaded.geometry.items())
    else:
        parts = [(source.stem, loaded)]
    parts = [(name, part) for name, part in parts if len(part.faces)]
    if not parts:
        raise MeshParseError(str(source), 0, "STL contains no faces")

    labels = dict(electrode_labels or {})
    electrodes: list[Electrode] = []
    vertex_blocks, face_blocks, label_blocks = [], [], []
    offset = 0
    for index, (name, part) in enumerate(parts):
        if name in labels:
            role = _coerce_role(labels[name], f"electrode_labels.{name}")
        else:
            logger.warning("%s: solid %r has no role mapping, treating it as GROUND", source, name)
            role = ElectrodeRole.GROUND
        electrodes.append(Electrode(name, role))
        vertex_blocks.append(np.asarray(part.vertices, dtype=np.float64) * scale)
        face_blocks.append(np.asarray(part.faces, dtype=np.int64) + offset)
        label_blocks.append(np.full(len(part.faces), index))
        offset += len(part.vertices)

    vertices = np.concatenate(vertex_blocks)
    faces = np.concatenate(face_blocks)
    bad_edges = _non_manifold_edges(vertices, faces)
    if bad_edges:
        logger.warning("%s: %d non-manifold edges; loading anyway", source, bad_edges)

    mesh = TriangleMesh(vertices, faces, np.concatenate(label_blocks), tuple(e.id for e in electrodes))
    return TrapGeometry(mesh=mesh, electrodes=tuple(electrodes), ion_nominal=np.asarray(ion), label=source.stem)


def load_mesh(path: str | Path, electrode_labels: Mapping[str, str] | None = None) -> TrapGeometry:
    source = Path(path)
    if source.suffix.lower() in STL_SUFFIXES:
        geom = load_stl(source, electrode_labels)
    else:
        try:
            text = source.read_text(encoding="utf-8")
        except UnicodeDecodeError as exc:
            raise MeshParseError(str(source), 0, "not a text mesh file") from exc
        geom = parse_trapmesh(text, str(source), electrode_labels).geometry
    logger.info("loaded %s: %d faces, %d electrodes", source, geom.mesh.faces.shape[0], len(geom.electrodes))
    return geom


def read_face_scalars(path: str | Path) -> np.ndarray | None:
    source = Path(path)
    return parse_trapmesh(source.read_text(encoding="utf-8"), str(source)).scalars
