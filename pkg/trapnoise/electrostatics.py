from __future__ import annotations

import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from scipy import constants
from scipy.linalg import lapack, lu_factor, lu_solve
from scipy.sparse.linalg import LinearOperator, gmres
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from trapnoise.constants import (
    DEFAULT_MEMORY_CAP_GB,
    DENSE_PATCH_LIMIT,
    DIPOLE_SEPARATION,
    GMRES_RTOL,
    MATRIX_MAGIC,
    NEAR_FIELD_DIAMETERS,
    NEAR_FIELD_LEVELS,
    RESIDUAL_TOLERANCE,
)
from trapnoise.errors import BemSizeError, ParameterError, SolverError
from trapnoise.geometry import PatchSet, point_triangle_distances, subdivision_template

logger = logging.getLogger(__name__)

COULOMB = 1.0 / (4.0 * math.pi * constants.epsilon_0)
MIN_RCOND = 1e-14
ROW_BLOCK = 512

# Degree-2 rule with interior points, weights 1/3 each.
_THREE_POINT = np.array(
    [
        [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
        [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
        [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
    ]
)


def _near_rule() -> np.ndarray:
    """Centroid barycentrics of the NEAR_FIELD_LEVELS-fold midpoint split."""
    return subdivision_template(2**NEAR_FIELD_LEVELS).mean(axis=1)


def self_potential_integrals(triangles: np.ndarray) -> np.ndarray:
    """Exact integral of 1/r over each triangle, seen from its own centroid."""
    tris = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    point = tris.mean(axis=1)
    total = np.zeros(tris.shape[0])
    for a_index, b_index in ((0, 1), (1, 2), (2, 0)):
        a = tris[:, a_index] - point
        b = tris[:, b_index] - point
        edge = b - a
        tangent = edge / np.linalg.norm(edge, axis=1, keepdims=True)
        s1 = np.einsum("ij,ij->i", a, tangent)
        s2 = np.einsum("ij,ij->i", b, tangent)
        h = np.linalg.norm(a - s1[:, None] * tangent, axis=1)
        total += h * (np.arcsinh(s2 / h) - np.arcsinh(s1 / h))
    return total


def _quadrature_points(patches: PatchSet, indices: np.ndarray, rule: np.ndarray) -> np.ndarray:
    return np.einsum("qk,pkd->pqd", rule, patches.triangles[indices])


def _evaluation_rule(patches: PatchSet, point: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Quadrature nodes, weights and owning patch for evaluating at `point`."""
    distances = np.linalg.norm(patches.centroids - point, axis=1)
    near = distances < NEAR_FIELD_DIAMETERS * patches.diameters
    far_idx = np.flatnonzero(~near)
    near_idx = np.flatnonzero(near)
    nodes, weights, owners = [], [], []
    for idx, rule in ((far_idx, _THREE_POINT), (near_idx, _near_rule())):
        if idx.size == 0:
            continue
        count = rule.shape[0]
        nodes.append(_quadrature_points(patches, idx, rule).reshape(-1, 3))
        weights.append(np.repeat(patches.areas[idx] / count, count))
        owners.append(np.repeat(idx, count))
    if near_idx.size:
        exact = point_triangle_distances(point, patches.triangles[near_idx])
        ratio = exact / patches.diameters[near_idx]
        worst = int(np.argmin(ratio))
        if ratio[worst] < 0.1:
            logger.warning(
                "evaluation point %.3e m from patch %d (%.2f patch sizes); accuracy degraded",
                exact[worst],
                int(near_idx[worst]),
                ratio[worst],
            )
    return np.concatenate(nodes), np.concatenate(weights), np.concatenate(owners)


def potential_kernel(patches: PatchSet, point) -> np.ndarray:
    """Potential at `point` per unit density on each patch, shape (N,)."""
    x = np.asarray(point, dtype=np.float64).reshape(3)
    nodes, weights, owners = _evaluation_rule(patches, x)
    r = np.linalg.norm(x - nodes, axis=1)
    return COULOMB * np.bincount(owners, weights / r, minlength=patches.count)


def field_kernel(patches: PatchSet, point) -> np.ndarray:
    """Field at `point` per unit density on each patch, shape (N, 3)."""
    x = np.asarray(point, dtype=np.float64).reshape(3)
    nodes, weights, owners = _evaluation_rule(patches, x)
    delta = x - nodes
    r = np.linalg.norm(delta, axis=1)
    scale = weights / r**3
    return COULOMB * np.stack(
        [np.bincount(owners, scale * delta[:, a], minlength=patches.count) for a in range(3)], axis=1
    )


def field_gradient_kernel(patches: PatchSet, point) -> np.ndarray:
    """d E_a / d x_b at `point` per unit density on each patch, shape (N, 3, 3)."""
    x = np.asarray(point, dtype=np.float64).reshape(3)
    nodes, weights, owners = _evaluation_rule(patches, x)
    delta = x - nodes
    r = np.linalg.norm(delta, axis=1)
    out = np.empty((patches.count, 3, 3))
    for a in range(3):
        for b in range(3):
            term = -3.0 * delta[:, a] * delta[:, b] / r**5
            if a == b:
                term = term + 1.0 / r**3
            out[:, a, b] = np.bincount(owners, weights * term, minlength=patches.count)
    return COULOMB * out


@dataclass
class BemOperator:
    patches: PatchSet
    matrix: np.ndarray
    method: str = "dense"
    condition: float = float("nan")
    _lu: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.patches.count

    @cached_property
    def _preconditioner(self) -> LinearOperator:
        inverse_diagonal = 1.0 / np.diag(self.matrix)
        return LinearOperator(self.matrix.shape, matvec=lambda v: inverse_diagonal * np.ravel(v), dtype=np.float64)

    def _solve_once(self, rhs: np.ndarray, transpose: bool = False) -> np.ndarray:
        if self._lu is not None:
            return lu_solve(self._lu, rhs, trans=1 if transpose else 0, check_finite=False)
        matrix = self.matrix.T if transpose else self.matrix
        operator = LinearOperator(matrix.shape, matvec=lambda v: matrix @ np.ravel(v), dtype=np.float64)
        columns = rhs.reshape(self.size, -1)
        out = np.empty_like(columns)
        for column in range(columns.shape[1]):
            b = columns[:, column]
            if not np.any(b):
                out[:, column] = 0.0
                continue
            x, info = gmres(
                operator,
                b,
                rtol=GMRES_RTOL,
                atol=0.0,
                restart=200,
                maxiter=50,
                M=self._preconditioner,
            )
            if info != 0:
                raise SolverError(f"GMRES did not converge (info={info})")
            out[:, column] = x
        return out.reshape(rhs.shape)

    def solve(self, rhs, transpose: bool = False) -> np.ndarray:
        """Densities for collocation voltages `rhs` ((N,) or (N, m)), with one refinement step.

        `transpose` solves with the transposed influence matrix instead.
        """
        b = np.asarray(rhs, dtype=np.float64)
        if b.shape[0] != self.size:
            raise ParameterError("voltages", f"expected {self.size} rows, got {b.shape[0]}")
        matrix = self.matrix.T if transpose else self.matrix
        scale = np.max(np.abs(b), axis=0) if b.size else 0.0
        x = self._solve_once(b, transpose)
        tolerance = RESIDUAL_TOLERANCE * np.where(scale > 0, scale, 1.0)
        residual = matrix @ x - b
        if np.any(np.max(np.abs(residual), axis=0) > tolerance):
            x = x - self._solve_once(residual, transpose)
            residual = matrix @ x - b
            worst = np.max(np.abs(residual), axis=0)
            if np.any(worst > tolerance):
                raise SolverError(
                    f"residual {float(np.max(worst / np.where(scale > 0, scale, 1.0))):.3e} above tolerance",
                    self.condition,
                )
        return x


def _check_distinct(patches: PatchSet) -> None:
    tree = cKDTree(patches.centroids)
    pairs = tree.query_pairs(r=1e-9 * float(patches.diameters.min()), output_type="ndarray")
    if len(pairs):
        i, j = (int(v) for v in pairs[0])
        raise ParameterError("patches", f"patches {i} and {j} have coincident centroids")


def required_bytes(patch_count: int, dense: bool) -> int:
    return (2 if dense else 1) * patch_count * patch_count * 8


def _near_pairs(patches: PatchSet) -> list[tuple[int, np.ndarray]]:
    tree = cKDTree(patches.centroids)
    hits = tree.query_ball_point(
        patches.centroids, r=NEAR_FIELD_DIAMETERS * patches.diameters, return_sorted=True
    )
    pairs = []
    for source, targets in enumerate(hits):
        targets = np.array([t for t in targets if t != source], dtype=np.int64)
        if targets.size:
            pairs.append((source, targets))
    return pairs


def assemble(
    patches: PatchSet,
    memory_cap_gb: float = DEFAULT_MEMORY_CAP_GB,
    dense_limit: int = DENSE_PATCH_LIMIT,
) -> BemOperator:
    count = patches.count
    if count < 1:
        raise ParameterError("patches", "need at least one patch")
    dense = count <= dense_limit
    needed = required_bytes(count, dense)
    cap = int(memory_cap_gb * 1e9)
    if needed > cap:
        raise BemSizeError(count, needed, cap)
    _check_distinct(patches)

    centroids = patches.centroids
    weights = COULOMB * patches.areas
    matrix = np.empty((count, count))

    def far_block(start: int, stop: int) -> None:
        with np.errstate(divide="ignore"):
            matrix[start:stop] = weights[None, :] / cdist(centroids[start:stop], centroids)

    Parallel(prefer="threads")(delayed(far_block)(start, min(start + ROW_BLOCK, count)) for start in range(0, count, ROW_BLOCK))

    near_rule = _near_rule()
    pairs = _near_pairs(patches)

    def near_column(source: int, targets: np.ndarray) -> None:
        nodes = _quadrature_points(patches, np.array([source]), near_rule)[0]
        values = (1.0 / cdist(centroids[targets], nodes)).sum(axis=1)
        matrix[targets, source] = weights[source] / near_rule.shape[0] * values

    Parallel(prefer="threads")(delayed(near_column)(source, targets) for source, targets in pairs)
    np.fill_diagonal(matrix, COULOMB * self_potential_integrals(patches.triangles))
    logger.debug("assembled %dx%d matrix with %d near-field columns", count, count, len(pairs))

    if not dense:
        logger.info("using GMRES with Jacobi preconditioner for %d patches", count)
        matrix.setflags(write=False)
        return BemOperator(patches, matrix, method="gmres")

    anorm = float(np.linalg.norm(matrix, 1))
    lu, piv = lu_factor(matrix, check_finite=False)
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    condition = math.inf if rcond == 0 else 1.0 / rcond
    if info != 0 or rcond < MIN_RCOND:
        raise SolverError("influence matrix is singular or ill-conditioned", condition)
    matrix.setflags(write=False)
    logger.info("factorized %d-patch influence matrix (condition ~%.2e)", count, condition)
    return BemOperator(patches, matrix, method="dense", condition=condition, _lu=(lu, piv))


@dataclass(frozen=True)
class DirichletSolution:
    patches: PatchSet
    densities: np.ndarray
    voltages: np.ndarray

    def __post_init__(self) -> None:
        for name in ("densities", "voltages"):
            array = np.array(getattr(self, name), dtype=np.float64, copy=True)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def total_charge(self) -> float:
        return math.fsum(self.densities * self.patches.areas)

    def potential_at(self, point) -> float:
        return float(potential_kernel(self.patches, point) @ self.densities)

    def field_at(self, point) -> np.ndarray:
        return self.densities @ field_kernel(self.patches, point)

    def field_gradient_at(self, point) -> np.ndarray:
        return np.einsum("p,pab->ab", self.densities, field_gradient_kernel(self.patches, point))

    def scaled(self, factor: float) -> DirichletSolution:
        return DirichletSolution(self.patches, self.densities * factor, self.voltages * factor)

    def __add__(self, other: DirichletSolution) -> DirichletSolution:
        return DirichletSolution(self.patches, self.densities + other.densities, self.voltages + other.voltages)


def solve_patch_voltages(op: BemOperator, voltages) -> DirichletSolution:
    values = np.asarray(voltages, dtype=np.float64).reshape(op.size)
    if not np.any(values):
        return DirichletSolution(op.patches, np.zeros(op.size), values)
    return DirichletSolution(op.patches, op.solve(values), values)


def solve_dirichlet(op: BemOperator, voltages: Mapping[str, float]) -> DirichletSolution:
    for electrode_id in op.patches.electrode_ids:
        if electrode_id not in voltages:
            raise ParameterError(f"voltages.{electrode_id}", "electrode has no assigned voltage")
    unknown = set(voltages) - set(op.patches.electrode_ids)
    if unknown:
        raise ParameterError(f"voltages.{sorted(unknown)[0]}", "no such electrode")
    return solve_patch_voltages(op, op.patches.voltages_from(voltages))


@dataclass(frozen=True)
class PatchCouplings:
    direction: np.ndarray
    values: np.ndarray
    method: str

    def __post_init__(self) -> None:
        for name in ("direction", "values"):
            array = np.array(getattr(self, name), dtype=np.float64, copy=True)
            array.setflags(write=False)
            object.__setattr__(self, name, array)


def patch_coupling_direct(op: BemOperator, patch_index: int, ion) -> np.ndarray:
    """Field at the ion (1/m) with 1 V on one patch and every other patch grounded."""
    if not 0 <= patch_index < op.size:
        raise ParameterError("patch_index", f"{patch_index} outside 0..{op.size - 1}")
    voltages = np.zeros(op.size)
    voltages[patch_index] = 1.0
    return solve_patch_voltages(op, voltages).field_at(ion)


def patch_couplings_direct(op: BemOperator, ion, indices=None) -> np.ndarray:
    """Direct couplings for many patches from one multi-right-hand-side solve, shape (n, 3)."""
    selected = np.arange(op.size) if indices is None else np.asarray(indices, dtype=np.int64)
    rhs = np.zeros((op.size, selected.size))
    rhs[selected, np.arange(selected.size)] = 1.0
    densities = op.solve(rhs)
    return densities.T @ field_kernel(op.patches, ion)


def _dipole_potential(points: np.ndarray, positive: np.ndarray, negative: np.ndarray) -> np.ndarray:
    return COULOMB * (
        1.0 / np.linalg.norm(points - positive, axis=1) - 1.0 / np.linalg.norm(points - negative, axis=1)
    )


def patch_couplings_adjoint(op: BemOperator, ion, direction) -> PatchCouplings:
    """All couplings along `direction` from one grounded solve with a point dipole at the ion."""
    k = np.asarray(direction, dtype=np.float64).reshape(3)
    k = k / np.linalg.norm(k)
    x = np.asarray(ion, dtype=np.float64).reshape(3)
    patches = op.patches
    clearance = float(point_triangle_distances(x, patches.triangles).min())
    separation = DIPOLE_SEPARATION * clearance
    if clearance <= 0.0 or not np.all(np.linalg.norm(patches.centroids - x, axis=1) > 10.0 * separation):
        raise ParameterError("ion", "dipole source lies on an electrode surface")
    positive = x + 0.5 * separation * k
    negative = x - 0.5 * separation * k
    # patch integrals of the dipole potential on the nodes the field kernel uses, -separation * (F k)
    nodes, weights, owners = _evaluation_rule(patches, x)
    integrals = np.bincount(owners, weights * _dipole_potential(nodes, positive, negative), minlength=patches.count)
    values = op.solve(-integrals, transpose=True) / separation
    return PatchCouplings(k, values, "adjoint")


def rms_relative_deviation(reference, candidate) -> float:
    reference = np.asarray(reference, dtype=np.float64)
    candidate = np.asarray(candidate, dtype=np.float64)
    norm = float(np.linalg.norm(reference))
    if norm == 0.0:
        return float(np.linalg.norm(candidate))
    return float(np.linalg.norm(candidate - reference)) / norm


def dump_matrix(op: BemOperator, path: str | Path) -> Path:
    target = Path(path)
    rows, cols = op.matrix.shape
    with target.open("wb") as handle:
        handle.write(MATRIX_MAGIC)
        handle.write(np.array([rows, cols], dtype="<u8").tobytes())
        handle.write(np.ascontiguousarray(op.matrix, dtype="<f8").tobytes())
    return target


def load_matrix(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != MATRIX_MAGIC:
        raise ParameterError(str(path), "not an influence-matrix dump")
    rows, cols = (int(v) for v in np.frombuffer(data, dtype="<u8", count=2, offset=4))
    matrix = np.frombuffer(data, dtype="<f8", offset=20)
    if matrix.size != rows * cols:
        raise ParameterError(str(path), f"expected {rows * cols} values, found {matrix.size}")
    return matrix.reshape(rows, cols).astype(np.float64)
