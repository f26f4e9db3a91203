from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.spatial import cKDTree

from trapnoise.constants import MICRON
from trapnoise.errors import FeatureResolutionError, ParameterError
from trapnoise.geometry import (
    build_blade,
    build_disc,
    build_skeleton,
    discretize,
    min_ion_electrode_distance,
    point_triangle_distances,
    subdivision_template,
)
from trapnoise.models import BladeParams, DiscParams, ElectrodeRole, Resolution, SkeletonParams


def _normals_face_ion(patches) -> bool:
    towards = patches.ion - patches.centroids
    return bool(np.all(np.einsum("ij,ij->i", patches.normals, towards) > 0))


def test_skeleton_has_rails_and_endcaps():
    geom = build_skeleton(SkeletonParams())
    assert set(geom.electrode_ids()) == {"rf_px", "rf_nx", "dc_py", "dc_ny", "endcap_nz", "endcap_pz"}
    assert set(geom.electrode_ids(ElectrodeRole.RF)) == {"rf_px", "rf_nx"}
    assert geom.nominal_distance == pytest.approx(200.0 * MICRON)
    assert min_ion_electrode_distance(geom) == pytest.approx(200.0 * MICRON, rel=1e-9)
    assert geom.min_feature == pytest.approx(9.0 * MICRON)


def test_single_tooth_skeleton_has_no_endcaps():
    geom = build_skeleton(SkeletonParams(teeth_count=1))
    assert set(geom.electrode_ids()) == {"rf_px", "rf_nx", "dc_py", "dc_ny"}


def test_default_skeleton_centres_a_tooth_on_the_ion():
    params = SkeletonParams()
    assert params.teeth_count == 8
    assert params.axial_extent == pytest.approx(1500.0 * MICRON)
    spans = params.tooth_spans()
    assert len(spans) == 8
    assert (-85.0 * MICRON, 85.0 * MICRON) == pytest.approx(spans[3])
    for start, stop in spans[1:-1]:
        assert stop - start == pytest.approx(params.tooth_width)
    assert spans[0][0] == pytest.approx(-750.0 * MICRON)
    assert spans[-1][1] >= 750.0 * MICRON


def test_gap_centred_skeleton_spans_axial_extent():
    params = SkeletonParams(gap_phase=0.0)
    spans = params.tooth_spans()
    assert spans[0][0] == pytest.approx(-750.0 * MICRON)
    assert spans[-1][1] == pytest.approx(750.0 * MICRON)
    assert spans[3][1] == pytest.approx(-4.5 * MICRON)
    assert spans[4][0] == pytest.approx(4.5 * MICRON)
    z = build_skeleton(params).mesh.vertices[:, 2]
    assert z.max() - z.min() == pytest.approx(params.axial_extent, rel=1e-9)


def _maps_onto_itself(vertices: np.ndarray, transform: np.ndarray) -> bool:
    distances, _ = cKDTree(vertices).query(vertices @ transform.T)
    return bool(distances.max() < 1e-6 * MICRON)


def test_skeleton_has_fourfold_symmetry():
    quarter = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    for params in (SkeletonParams(), SkeletonParams(gap_phase=0.0)):
        vertices = build_skeleton(params).mesh.vertices
        assert _maps_onto_itself(vertices, quarter)
        assert _maps_onto_itself(vertices, np.diag([-1.0, 1.0, 1.0]))
        assert _maps_onto_itself(vertices, np.diag([1.0, -1.0, 1.0]))
    # a gap at the ion with an even tooth count is also mirror symmetric along the axis
    assert _maps_onto_itself(build_skeleton(SkeletonParams(gap_phase=0.0)).mesh.vertices, np.diag([1.0, 1.0, -1.0]))


def test_wide_teeth_lengthen_the_rail():
    wide = SkeletonParams(tooth_width=211.0 * MICRON)
    spans = wide.tooth_spans()
    assert spans[-1][1] - spans[0][0] == pytest.approx(8 * 211.0 * MICRON + 7 * 9.0 * MICRON)
    assert (-105.5 * MICRON, 105.5 * MICRON) == pytest.approx(spans[3])
    assert build_skeleton(wide).surface_area > build_skeleton(SkeletonParams()).surface_area


def test_gap_phase_moves_gaps_without_moving_ion():
    base = SkeletonParams(gap_phase=0.0)
    shifted = replace(base, gap_phase=0.5)
    np.testing.assert_allclose(shifted.gap_centers, base.gap_centers + 89.5 * MICRON)
    z = build_skeleton(shifted).mesh.vertices[:, 2] / MICRON
    assert np.any(np.isclose(z, 85.0)) and np.any(np.isclose(z, 94.0))
    np.testing.assert_allclose(build_skeleton(shifted).ion_nominal, build_skeleton(base).ion_nominal)


@pytest.mark.parametrize("field", ["tooth_gap", "wire_diameter", "tooth_width"])
def test_skeleton_rejects_zero_lengths(field):
    with pytest.raises(ParameterError) as info:
        build_skeleton(SkeletonParams(**{field: 0.0}))
    assert info.value.path == field


def test_blade_segments_dc_electrodes():
    geom = build_blade(BladeParams())
    assert set(geom.electrode_ids(ElectrodeRole.DC)) == {"dc_py", "dc_ny", "endcap_nz", "endcap_pz"}
    assert min_ion_electrode_distance(geom) == pytest.approx(200.0 * MICRON, rel=1e-9)
    assert geom.min_feature == pytest.approx(50.0 * MICRON)


def test_blade_rejects_overlapping_segments():
    with pytest.raises(ParameterError, match="segment_gap"):
        build_blade(BladeParams(segment_gap=600.0 * MICRON))


def test_disc_is_grounded_plane_below_ion():
    geom = build_disc(DiscParams(radius=1000.0 * MICRON, ion_distance=200.0 * MICRON))
    assert geom.electrodes[0].role is ElectrodeRole.GROUND
    np.testing.assert_allclose(geom.mesh.vertices[:, 2], -200.0 * MICRON)
    assert min_ion_electrode_distance(geom) == pytest.approx(200.0 * MICRON)


def test_subdivision_template_tiles_triangle():
    for n in (1, 2, 5):
        bary = subdivision_template(n)
        assert bary.shape == (n * n, 3, 3)
        np.testing.assert_allclose(bary.sum(axis=2), 1.0)


def test_uniform_discretization_of_unit_square(unit_square):
    patches = discretize(unit_square, target_edge=0.1)
    # longest coarse edge sqrt(2) gives a 10-fold split of both triangles
    assert patches.count == 200
    assert patches.total_area == pytest.approx(1.0, rel=1e-12)
    assert np.ptp(patches.areas) == pytest.approx(0.0, abs=1e-15)


def test_discretization_count_grows_with_refinement(unit_square):
    coarse = discretize(unit_square, target_edge=0.1)
    fine = discretize(unit_square, target_edge=0.05)
    assert fine.count == 722
    assert fine.count > coarse.count
    assert fine.total_area == pytest.approx(coarse.total_area, rel=1e-12)


def test_discretization_refuses_edge_above_smallest_feature():
    geom = build_skeleton(SkeletonParams())
    with pytest.raises(FeatureResolutionError) as info:
        discretize(geom, target_edge=20.0 * MICRON)
    assert info.value.path == "resolution.target_edge"


def test_default_resolution_meshes_uniformly():
    resolution = Resolution()
    assert resolution.grading == 0.0
    geom = build_skeleton(SkeletonParams(teeth_count=3, axial_extent=300.0 * MICRON))
    patches = discretize(geom, resolution.target_edge, resolution.grading, resolution.max_edge_scale)
    assert patches.grading == 0.0
    assert patches.diameters.max() <= 1.5 * resolution.target_edge * (1.0 + 1e-9)
    assert patches.total_area == pytest.approx(geom.surface_area, rel=1e-9)


def test_graded_mesh_is_coarser_far_from_ion():
    geom = build_disc(DiscParams(radius=2000.0 * MICRON, ion_distance=200.0 * MICRON))
    uniform = discretize(geom, 50.0 * MICRON)
    graded = discretize(geom, 50.0 * MICRON, grading=1.0, max_edge_scale=40.0)
    assert graded.count < uniform.count
    assert graded.total_area == pytest.approx(uniform.total_area, rel=1e-9)
    near = graded.diameters[graded.distances < 300.0 * MICRON]
    far = graded.diameters[graded.distances > 1500.0 * MICRON]
    assert near.max() < far.mean()


def test_patch_normals_point_away_from_conductors(toy_patches):
    assert _normals_face_ion(toy_patches)


def test_transformed_geometry_keeps_distances_and_winding(toy_geometry):
    quarter = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    mirror = np.diag([1.0, 1.0, -1.0])
    for rotation in (quarter, mirror):
        moved = toy_geometry.transformed(rotation, translation=(1e-3, 0.0, 0.0))
        assert min_ion_electrode_distance(moved) == pytest.approx(min_ion_electrode_distance(toy_geometry))
        assert _normals_face_ion(discretize(moved, 100.0 * MICRON))
    assert moved.surface_area == pytest.approx(toy_geometry.surface_area)


def test_geometry_rejects_ion_far_from_nominal(toy_geometry):
    shifted = replace(toy_geometry, ion_nominal=np.array([50.0 * MICRON, 0.0, 0.0]))
    with pytest.raises(ParameterError, match="nominal"):
        shifted.validate()
    assert math.isclose(min_ion_electrode_distance(shifted), 150.0 * MICRON, rel_tol=1e-9)


def test_triangle_distance_at_micron_scale():
    triangle = np.array([[200.0, -100.0, 0.0], [200.0, 0.0, 100.0], [200.0, 0.0, 0.0]]) * MICRON
    assert point_triangle_distances(np.zeros(3), triangle)[0] == pytest.approx(200.0 * MICRON, rel=1e-9)
    above = np.array([200.0, -20.0, 10.0]) * MICRON + np.array([0.5, 0.0, 0.0]) * MICRON
    assert point_triangle_distances(above, triangle)[0] == pytest.approx(0.5 * MICRON, rel=1e-6)


def test_triangle_distance_is_translation_invariant():
    triangle = np.array([[0.0, 0.0, 0.0], [9.0, 0.0, 0.0], [0.0, 9.0, 0.0]]) * MICRON
    point = np.array([3.0, 3.0, 4.0]) * MICRON
    offset = np.array([1.0, -2.0, 0.5]) * 1e-3
    here = point_triangle_distances(point, triangle)[0]
    there = point_triangle_distances(point + offset, triangle + offset)[0]
    assert here == pytest.approx(4.0 * MICRON, rel=1e-9)
    assert there == pytest.approx(here, rel=1e-9)
