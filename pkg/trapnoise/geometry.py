from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
import trimesh

from trapnoise.constants import DEFAULT_MAX_EDGE_SCALE
from trapnoise.errors import FeatureResolutionError, NumericalError, ParameterError
from trapnoise.models import BladeParams, DiscParams, Electrode, ElectrodeRole, SkeletonParams

logger = logging.getLogger(__name__)

AXIAL = np.array([0.0, 0.0, 1.0])
# Coarse triangles larger than this fraction of their ion distance are split before subdivision.
GRADING_SPLIT_RATIO = 0.5
MAX_SPLIT_DEPTH = 12


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _triangle_areas(triangles: np.ndarray) -> np.ndarray:
    cross = np.cross(triangles[:, 1] - triangles[:, 0], triangles[:, 2] - triangles[:, 0])
    return 0.5 * np.linalg.norm(cross, axis=1)


def _longest_edges(triangles: np.ndarray) -> np.ndarray:
    edges = np.stack(
        (
            triangles[:, 1] - triangles[:, 0],
            triangles[:, 2] - triangles[:, 1],
            triangles[:, 0] - triangles[:, 2],
        ),
        axis=1,
    )
    return np.linalg.norm(edges, axis=2).max(axis=1)


def point_triangle_distances(point, triangles: np.ndarray) -> np.ndarray:
    """Exact distance from one point to every triangle.

    trimesh compares against absolute tolerances, so each triangle is moved to the
    point and measured in units of its own longest edge.
    """
    tris = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    if tris.shape[0] == 0:
        return np.empty(0)
    local = tris - np.asarray(point, dtype=np.float64).reshape(1, 1, 3)
    scale = _longest_edges(local)
    scale = np.where(scale > 0.0, scale, 1.0)
    closest = trimesh.triangles.closest_point(local / scale[:, None, None], np.zeros((tris.shape[0], 3)))
    return np.linalg.norm(closest, axis=1) * scale


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    faces: np.ndarray
    face_electrode: np.ndarray
    electrode_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", _frozen(self.vertices, np.float64).reshape(-1, 3))
        object.__setattr__(self, "faces", _frozen(self.faces, np.int64).reshape(-1, 3))
        object.__setattr__(self, "face_electrode", _frozen(self.face_electrode, np.int64).reshape(-1))
        object.__setattr__(self, "electrode_ids", tuple(self.electrode_ids))

    def validate(self) -> None:
        if len(set(self.electrode_ids)) != len(self.electrode_ids):
            raise ParameterError("mesh.electrode_ids", "electrode ids must be unique")
        if self.faces.shape[0] != self.face_electrode.shape[0]:
            raise ParameterError("mesh.face_electrode", "needs one label per face")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= self.vertices.shape[0]):
            raise ParameterError("mesh.faces", "face references a missing vertex")
        if self.face_electrode.size and (
            self.face_electrode.min() < 0 or self.face_electrode.max() >= len(self.electrode_ids)
        ):
            raise ParameterError("mesh.face_electrode", "label references a missing electrode")
        if self.faces.size:
            extent = float(np.ptp(self.vertices, axis=0).max()) or 1.0
            degenerate = np.flatnonzero(self.areas <= 1e-14 * extent * extent)
            if degenerate.size:
                raise ParameterError("mesh.faces", f"face {int(degenerate[0])} has zero area")

    @property
    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]

    @cached_property
    def areas(self) -> np.ndarray:
        return _triangle_areas(self.triangles)

    @property
    def surface_area(self) -> float:
        return math.fsum(self.areas)

    def face_labels(self) -> list[str]:
        return [self.electrode_ids[index] for index in self.face_electrode]


class MeshBuilder:
    """Collects outward-oriented triangles electrode by electrode."""

    def __init__(self, cell_aspect: float = 2.0, max_cell: float = 250e-6) -> None:
        self.cell_aspect = cell_aspect
        self.max_cell = max_cell
        self._vertices: list[np.ndarray] = []
        self._labels: list[int] = []
        self._electrodes: list[Electrode] = []
        self._index: dict[str, int] = {}

    def electrode(self, electrode_id: str, role: ElectrodeRole) -> int:
        if electrode_id not in self._index:
            self._index[electrode_id] = len(self._electrodes)
            self._electrodes.append(Electrode(electrode_id, role))
        return self._index[electrode_id]

    def add_triangle(self, a, b, c, electrode: int, interior=None) -> None:
        tri = np.array([a, b, c], dtype=np.float64)
        if interior is not None:
            normal = np.cross(tri[1] - tri[0], tri[2] - tri[0])
            if float(np.dot(normal, tri.mean(axis=0) - np.asarray(interior, dtype=np.float64))) < 0.0:
                tri = tri[[0, 2, 1]]
        self._vertices.append(tri)
        self._labels.append(electrode)

    def add_quad(self, p0, p1, p2, p3, electrode: int, interior=None, max_cell: float | None = None) -> None:
        corners = np.array([p0, p1, p2, p3], dtype=np.float64)
        cell_limit = self.max_cell if max_cell is None else max_cell
        length_u = max(np.linalg.norm(corners[1] - corners[0]), np.linalg.norm(corners[2] - corners[3]))
        length_v = max(np.linalg.norm(corners[3] - corners[0]), np.linalg.norm(corners[2] - corners[1]))
        n_u = max(1, math.ceil(length_u / min(cell_limit, self.cell_aspect * length_v) - 1e-9))
        n_v = max(1, math.ceil(length_v / min(cell_limit, self.cell_aspect * length_u) - 1e-9))

        def point(s: float, t: float) -> np.ndarray:
            return (
                (1 - s) * (1 - t) * corners[0]
                + s * (1 - t) * corners[1]
                + s * t * corners[2]
                + (1 - s) * t * corners[3]
            )

        for i in range(n_u):
            for j in range(n_v):
                a = point(i / n_u, j / n_v)
                b = point((i + 1) / n_u, j / n_v)
                c = point((i + 1) / n_u, (j + 1) / n_v)
                d = point(i / n_u, (j + 1) / n_v)
                if np.linalg.norm(c - a) <= np.linalg.norm(d - b):
                    self.add_triangle(a, b, c, electrode, interior)
                    self.add_triangle(a, c, d, electrode, interior)
                else:
                    self.add_triangle(a, b, d, electrode, interior)
                    self.add_triangle(b, c, d, electrode, interior)

    def add_hex_prism(self, start, end, radius: float, facing, electrode: int, caps=(True, True)) -> None:
        """Hexagonal wire from `start` to `end` with one flat facet normal to `facing`."""
        start = np.asarray(start, dtype=np.float64)
        end = np.asarray(end, dtype=np.float64)
        axis = end - start
        axis /= np.linalg.norm(axis)
        u = np.asarray(facing, dtype=np.float64) - np.dot(facing, axis) * axis
        u /= np.linalg.norm(u)
        w = np.cross(axis, u)
        angles = np.radians(30.0 + 60.0 * np.arange(6))
        directions = np.cos(angles)[:, None] * u + np.sin(angles)[:, None] * w
        ring_start = start + radius * directions
        ring_end = end + radius * directions
        interior = 0.5 * (start + end)
        for m in range(6):
            n = (m + 1) % 6
            self.add_quad(ring_start[m], ring_start[n], ring_end[n], ring_end[m], electrode, interior)
        for enabled, center, ring in ((caps[0], start, ring_start), (caps[1], end, ring_end)):
            if not enabled:
                continue
            for m in range(6):
                self.add_triangle(center, ring[m], ring[(m + 1) % 6], electrode, interior)

    def mesh(self) -> TriangleMesh:
        if not self._vertices:
            raise ParameterError("mesh", "geometry has no faces")
        vertices = np.concatenate(self._vertices, axis=0)
        faces = np.arange(vertices.shape[0], dtype=np.int64).reshape(-1, 3)
        return TriangleMesh(vertices, faces, np.array(self._labels), tuple(e.id for e in self._electrodes))

    @property
    def electrodes(self) -> tuple[Electrode, ...]:
        return tuple(self._electrodes)


@dataclass(frozen=True)
class TrapGeometry:
    mesh: TriangleMesh
    electrodes: tuple[Electrode, ...]
    ion_nominal: np.ndarray
    params: SkeletonParams | BladeParams | DiscParams | None = None
    axial_direction: np.ndarray = field(default_factory=lambda: AXIAL.copy())
    label: str = "geometry"
    nominal_distance: float | None = None
    min_feature: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "ion_nominal", _frozen(self.ion_nominal, np.float64).reshape(3))
        direction = np.asarray(self.axial_direction, dtype=np.float64).reshape(3)
        object.__setattr__(self, "axial_direction", _frozen(direction / np.linalg.norm(direction), np.float64))
        object.__setattr__(self, "electrodes", tuple(self.electrodes))

    def validate(self) -> None:
        self.mesh.validate()
        if tuple(e.id for e in self.electrodes) != self.mesh.electrode_ids:
            raise ParameterError("electrodes", "electrode list does not match the mesh labels")
        distance = min_ion_electrode_distance(self)
        if distance <= 0.0:
            raise ParameterError("ion_nominal", "ion lies on an electrode surface")
        if self.nominal_distance is not None and abs(distance - self.nominal_distance) > 0.01 * self.nominal_distance:
            raise ParameterError(
                "ion_nominal",
                f"min ion-electrode distance {distance * 1e6:.3f} um differs from nominal "
                f"{self.nominal_distance * 1e6:.3f} um by more than 1%",
            )

    @property
    def surface_area(self) -> float:
        return self.mesh.surface_area

    def electrode_ids(self, *roles: ElectrodeRole) -> list[str]:
        return [e.id for e in self.electrodes if not roles or e.role in roles]

    def role_of(self, electrode_id: str) -> ElectrodeRole:
        for electrode in self.electrodes:
            if electrode.id == electrode_id:
                return electrode.role
        raise ParameterError("electrodes", f"unknown electrode {electrode_id!r}")

    def transformed(self, rotation, translation=(0.0, 0.0, 0.0)) -> TrapGeometry:
        matrix = np.asarray(rotation, dtype=np.float64).reshape(3, 3)
        shift = np.asarray(translation, dtype=np.float64).reshape(3)
        faces = self.mesh.faces
        if np.linalg.det(matrix) < 0:
            faces = faces[:, [0, 2, 1]]
        mesh = TriangleMesh(self.mesh.vertices @ matrix.T + shift, faces, self.mesh.face_electrode, self.mesh.electrode_ids)
        return TrapGeometry(
            mesh=mesh,
            electrodes=self.electrodes,
            ion_nominal=matrix @ self.ion_nominal + shift,
            params=self.params,
            axial_direction=matrix @ self.axial_direction,
            label=self.label,
            nominal_distance=self.nominal_distance,
            min_feature=self.min_feature,
        )


def geometry_from_builder(builder: MeshBuilder, ion, **kwargs) -> TrapGeometry:
    return TrapGeometry(mesh=builder.mesh(), electrodes=builder.electrodes, ion_nominal=np.asarray(ion), **kwargs)


def _rail_frame(azimuth_deg: float) -> tuple[np.ndarray, np.ndarray]:
    angle = math.radians(azimuth_deg)
    radial = np.array([math.cos(angle), math.sin(angle), 0.0])
    return radial, np.cross(AXIAL, radial)


# (electrode id, role, azimuth in degrees); RF on the x axis, DC on the y axis.
RAILS = (
    ("rf_px", ElectrodeRole.RF, 0.0),
    ("dc_py", ElectrodeRole.DC, 90.0),
    ("rf_nx", ElectrodeRole.RF, 180.0),
    ("dc_ny", ElectrodeRole.DC, 270.0),
)
ENDCAP_NEG = "endcap_nz"
ENDCAP_POS = "endcap_pz"


def build_skeleton(params: SkeletonParams) -> TrapGeometry:
    params.validate()
    builder = MeshBuilder()
    radius = params.wire_diameter / 2.0
    apothem = radius * math.cos(math.radians(30.0))
    rho_front = params.ion_electrode_distance + apothem
    spans = params.tooth_spans()
    count = len(spans)
    has_endcaps = count >= 3

    for rail_id, role, azimuth in RAILS:
        radial, _ = _rail_frame(azimuth)
        rail = builder.electrode(rail_id, role)
        for n, (z_start, z_stop) in enumerate(spans):
            z_center = 0.5 * (z_start + z_stop)
            electrode = rail
            if role is ElectrodeRole.DC and has_endcaps and n in (0, count - 1):
                electrode = builder.electrode(ENDCAP_NEG if n == 0 else ENDCAP_POS, ElectrodeRole.DC)
            front_start = rho_front * radial + z_start * AXIAL
            front_end = rho_front * radial + z_stop * AXIAL
            builder.add_hex_prism(front_start, front_end, radius, -radial, electrode)
            strut_start = (rho_front + apothem) * radial + z_center * AXIAL
            strut_end = (rho_front + apothem + params.strut_length) * radial + z_center * AXIAL
            builder.add_hex_prism(strut_start, strut_end, radius, AXIAL, electrode, caps=(False, True))

    geom = geometry_from_builder(
        builder,
        np.zeros(3),
        params=params,
        label="skeleton",
        nominal_distance=params.ion_electrode_distance,
        min_feature=params.tooth_gap,
    )
    geom.validate()
    logger.info(
        "built skeleton trap: %d teeth per rail, %d coarse faces, area %.4f mm^2",
        count,
        geom.mesh.faces.shape[0],
        geom.surface_area * 1e6,
    )
    return geom


def _add_wedge(builder: MeshBuilder, azimuth: float, params: BladeParams, z0: float, z1: float, electrode: int) -> None:
    radial, tangent = _rail_frame(azimuth)
    half_width = params.blade_depth * math.tan(math.radians(params.blade_tip_angle / 2.0))
    tip = params.ion_electrode_distance * radial
    corner_a = (params.ion_electrode_distance + params.blade_depth) * radial + half_width * tangent
    corner_b = (params.ion_electrode_distance + params.blade_depth) * radial - half_width * tangent
    lo = z0 * AXIAL
    hi = z1 * AXIAL
    interior = (tip + corner_a + corner_b) / 3.0 + 0.5 * (z0 + z1) * AXIAL
    builder.add_quad(tip + lo, corner_a + lo, corner_a + hi, tip + hi, electrode, interior)
    builder.add_quad(tip + lo, corner_b + lo, corner_b + hi, tip + hi, electrode, interior)
    builder.add_quad(corner_a + lo, corner_b + lo, corner_b + hi, corner_a + hi, electrode, interior)
    builder.add_triangle(tip + lo, corner_a + lo, corner_b + lo, electrode, interior)
    builder.add_triangle(tip + hi, corner_a + hi, corner_b + hi, electrode, interior)


def build_blade(params: BladeParams) -> TrapGeometry:
    params.validate()
    builder = MeshBuilder()
    half_length = params.blade_length / 2.0
    inner = params.endcap_separation / 2.0
    for rail_id, role, azimuth in RAILS:
        if role is ElectrodeRole.RF:
            _add_wedge(builder, azimuth, params, -half_length, half_length, builder.electrode(rail_id, role))
            continue
        _add_wedge(builder, azimuth, params, -half_length, -inner, builder.electrode(ENDCAP_NEG, role))
        center = builder.electrode(rail_id, role)
        _add_wedge(builder, azimuth, params, -inner + params.segment_gap, inner - params.segment_gap, center)
        _add_wedge(builder, azimuth, params, inner, half_length, builder.electrode(ENDCAP_POS, role))

    geom = geometry_from_builder(
        builder,
        np.zeros(3),
        params=params,
        label="blade",
        nominal_distance=params.ion_electrode_distance,
        min_feature=params.segment_gap,
    )
    geom.validate()
    logger.info("built blade trap: %d coarse faces, area %.4f mm^2", geom.mesh.faces.shape[0], geom.surface_area * 1e6)
    return geom


def build_disc(params: DiscParams) -> TrapGeometry:
    """Flat grounded disc below the ion; the plane proxy for distance scaling."""
    params.validate()
    builder = MeshBuilder(max_cell=math.inf)
    disc = builder.electrode("disc", ElectrodeRole.GROUND)
    z = -params.ion_distance
    below = np.array([0.0, 0.0, z - params.radius])

    def polygon(radius: float, count: int) -> np.ndarray:
        angles = 2.0 * math.pi * np.arange(count) / count
        return np.stack((radius * np.cos(angles), radius * np.sin(angles), np.full(count, z)), axis=1)

    inner_radius = 0.5 * params.ion_distance
    sides = 6
    boundary = polygon(inner_radius, sides)
    center = np.array([0.0, 0.0, z])
    for j in range(sides):
        builder.add_triangle(center, boundary[j], boundary[(j + 1) % sides], disc, below)

    radius = inner_radius
    while radius < params.radius * (1.0 - 1e-12):
        outer_radius = min(radius * params.ring_growth, params.radius)
        width = outer_radius - radius
        count = sides
        while 2.0 * math.pi * outer_radius / count > 2.0 * width:
            count *= 2
        factor = count // sides
        inner = np.concatenate(
            [
                boundary[j] + (boundary[(j + 1) % sides] - boundary[j]) * (k / factor)
                for j in range(sides)
                for k in range(factor)
            ]
        ).reshape(-1, 3)
        outer = polygon(outer_radius, count)
        for j in range(count):
            k = (j + 1) % count
            builder.add_quad(inner[j], outer[j], outer[k], inner[k], disc, below)
        boundary, sides, radius = outer, count, outer_radius

    geom = geometry_from_builder(
        builder,
        np.zeros(3),
        params=params,
        axial_direction=np.array([1.0, 0.0, 0.0]),
        label="disc",
        nominal_distance=params.ion_distance,
    )
    geom.validate()
    return geom


@dataclass(frozen=True)
class PatchSet:
    triangles: np.ndarray
    electrode_index: np.ndarray
    electrodes: tuple[Electrode, ...]
    ion: np.ndarray
    axial_direction: np.ndarray
    target_edge: float
    grading: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "triangles", _frozen(self.triangles, np.float64).reshape(-1, 3, 3))
        object.__setattr__(self, "electrode_index", _frozen(self.electrode_index, np.int64).reshape(-1))
        object.__setattr__(self, "ion", _frozen(self.ion, np.float64).reshape(3))
        object.__setattr__(self, "axial_direction", _frozen(self.axial_direction, np.float64).reshape(3))

    @property
    def count(self) -> int:
        return int(self.triangles.shape[0])

    @cached_property
    def centroids(self) -> np.ndarray:
        return _frozen(self.triangles.mean(axis=1), np.float64)

    @cached_property
    def areas(self) -> np.ndarray:
        return _frozen(_triangle_areas(self.triangles), np.float64)

    @cached_property
    def normals(self) -> np.ndarray:
        cross = np.cross(self.triangles[:, 1] - self.triangles[:, 0], self.triangles[:, 2] - self.triangles[:, 0])
        return _frozen(cross / np.linalg.norm(cross, axis=1, keepdims=True), np.float64)

    @cached_property
    def diameters(self) -> np.ndarray:
        return _frozen(_longest_edges(self.triangles), np.float64)

    @cached_property
    def distances(self) -> np.ndarray:
        return _frozen(np.linalg.norm(self.centroids - self.ion, axis=1), np.float64)

    @cached_property
    def axial_offsets(self) -> np.ndarray:
        return _frozen((self.centroids - self.ion) @ self.axial_direction, np.float64)

    @property
    def electrode_ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.electrodes)

    @property
    def total_area(self) -> float:
        return math.fsum(self.areas)

    def mask_for(self, electrode_ids) -> np.ndarray:
        wanted = {index for index, e in enumerate(self.electrodes) if e.id in set(electrode_ids)}
        return np.isin(self.electrode_index, sorted(wanted))

    def voltages_from(self, electrode_voltages) -> np.ndarray:
        table = np.array([float(electrode_voltages.get(e.id, 0.0)) for e in self.electrodes])
        return table[self.electrode_index]

    def to_mesh(self) -> TriangleMesh:
        vertices = self.triangles.reshape(-1, 3)
        faces = np.arange(vertices.shape[0], dtype=np.int64).reshape(-1, 3)
        return TriangleMesh(vertices, faces, self.electrode_index, self.electrode_ids)


@lru_cache(maxsize=64)
def subdivision_template(n: int) -> np.ndarray:
    """Barycentric corners (n*n, 3, 3) of the uniform n-fold split of a triangle."""
    rows = []
    for i in range(n):
        for j in range(n - i):
            rows.append(((i, j), (i + 1, j), (i, j + 1)))
            if i + j < n - 1:
                rows.append(((i + 1, j), (i + 1, j + 1), (i, j + 1)))
    ij = np.array(rows, dtype=np.float64) / n
    bary = np.empty(ij.shape[:2] + (3,))
    bary[..., 1] = ij[..., 0]
    bary[..., 2] = ij[..., 1]
    bary[..., 0] = 1.0 - ij[..., 0] - ij[..., 1]
    bary.setflags(write=False)
    return bary


def _midpoint_split(tri: np.ndarray) -> list[np.ndarray]:
    a, b, c = tri
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    return [np.array(t) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))]


def discretize(
    geom: TrapGeometry,
    target_edge: float,
    grading: float = 0.0,
    max_edge_scale: float = DEFAULT_MAX_EDGE_SCALE,
) -> PatchSet:
    if not (math.isfinite(target_edge) and target_edge > 0):
        raise ParameterError("resolution.target_edge", "must be positive")
    if geom.min_feature is not None and target_edge > geom.min_feature * (1.0 + 1e-9):
        raise FeatureResolutionError(
            "resolution.target_edge",
            f"{target_edge * 1e6:.3f} um cannot resolve the {geom.min_feature * 1e6:.3f} um feature of the "
            f"{geom.label} geometry",
        )
    if grading < 0:
        raise ParameterError("resolution.grading", "must be >= 0")
    reference = geom.nominal_distance or min_ion_electrode_distance(geom)
    ion = geom.ion_nominal

    def local_edge(distance: float) -> float:
        if grading == 0.0:
            return target_edge
        return target_edge * min(max_edge_scale, max(1.0, distance / reference) ** grading)

    pieces: list[np.ndarray] = []
    labels: list[int] = []
    for face_index, coarse in enumerate(geom.mesh.triangles):
        stack = [(coarse, 0)]
        leaves: list[np.ndarray] = []
        while stack:
            tri, depth = stack.pop()
            longest = float(_longest_edges(tri[None])[0])
            distance = float(point_triangle_distances(ion, tri)[0]) if grading else reference
            edge = local_edge(distance)
            n = max(1, math.ceil(longest / (1.5 * edge) - 1e-9))
            if grading and n > 1 and depth < MAX_SPLIT_DEPTH and longest > GRADING_SPLIT_RATIO * distance:
                # reversed so children come off the stack in order
                stack.extend((child, depth + 1) for child in reversed(_midpoint_split(tri)))
                continue
            leaves.append(np.einsum("pvk,kd->pvd", subdivision_template(n), tri))
        block = np.concatenate(leaves, axis=0)
        pieces.append(block)
        labels.append(np.full(block.shape[0], geom.mesh.face_electrode[face_index]))

    patches = PatchSet(
        triangles=np.concatenate(pieces, axis=0),
        electrode_index=np.concatenate(labels),
        electrodes=geom.electrodes,
        ion=ion,
        axial_direction=geom.axial_direction,
        target_edge=target_edge,
        grading=grading,
    )
    if grading == 0.0 and patches.diameters.max() > 1.5 * target_edge * (1.0 + 1e-9):
        raise NumericalError(
            "geometry", f"patch edge {patches.diameters.max() * 1e6:.3f} um exceeds 1.5x the {target_edge * 1e6:.3f} um target"
        )
    logger.info(
        "discretized %s geometry: %d patches (target edge %.2f um, grading %.2f)",
        geom.label,
        patches.count,
        target_edge * 1e6,
        grading,
    )
    return patches


def min_ion_electrode_distance(geom: TrapGeometry) -> float:
    return float(point_triangle_distances(geom.ion_nominal, geom.mesh.triangles).min())
