from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import constants

from trapnoise.constants import MICRON
from trapnoise.electrostatics import (
    assemble,
    dump_matrix,
    load_matrix,
    patch_coupling_direct,
    patch_couplings_adjoint,
    patch_couplings_direct,
    rms_relative_deviation,
    self_potential_integrals,
    solve_dirichlet,
    solve_patch_voltages,
)
from trapnoise.errors import BemSizeError, ParameterError
from trapnoise.geometry import PatchSet, discretize
from trapnoise.studies.validation import (
    check_plates,
    check_reciprocity,
    check_self_term,
    monte_carlo_self_term,
    sphere_geometry,
)

TOY_VOLTAGES = {"rf_px": 1.0, "dc_py": -0.25, "rf_nx": 1.0, "dc_ny": 0.5}


def test_self_term_of_right_triangle_matches_sampling():
    triangle = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    analytic = self_potential_integrals(triangle[None])[0]
    sampled = monte_carlo_self_term(triangle, 200_000, seed=7)
    assert analytic == pytest.approx(sampled, rel=5e-3)
    assert check_self_term(seed=7, samples=200_000).passed


def test_self_term_scales_linearly_with_size():
    triangle = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.5, 1.5, 0.0]])
    small, large = self_potential_integrals(np.stack([triangle, 3.0 * triangle]))
    assert large == pytest.approx(3.0 * small, rel=1e-12)


def test_unit_sphere_potential_and_capacitance():
    radius = 1e-3
    patches = discretize(sphere_geometry(radius, subdivisions=3), target_edge=radius)
    solution = solve_dirichlet(assemble(patches), {"body": 1.0})
    assert solution.potential_at([2.0 * radius, 0.0, 0.0]) == pytest.approx(0.5, rel=0.03)
    assert solution.total_charge == pytest.approx(4.0 * math.pi * constants.epsilon_0 * radius, rel=0.03)


def test_parallel_plates_give_uniform_field():
    assert check_plates().passed


def test_direct_and_adjoint_couplings_agree(toy_operator, toy_patches):
    ion = toy_patches.ion + np.array([10.0, -20.0, 15.0]) * MICRON
    direct = patch_couplings_direct(toy_operator, ion)
    assert direct.shape == (toy_patches.count, 3)
    for axis in np.eye(3):
        adjoint = patch_couplings_adjoint(toy_operator, ion, axis)
        assert adjoint.method == "adjoint"
        assert rms_relative_deviation(direct @ axis, adjoint.values) < 1e-6


def test_reciprocity_oracle():
    result = check_reciprocity()
    assert result.passed, result.detail


def test_single_patch_coupling_matches_batch(toy_operator, toy_patches):
    batch = patch_couplings_direct(toy_operator, toy_patches.ion, indices=[3, 40])
    np.testing.assert_allclose(batch[1], patch_coupling_direct(toy_operator, 40, toy_patches.ion), rtol=1e-9)
    with pytest.raises(ParameterError):
        patch_coupling_direct(toy_operator, toy_patches.count, toy_patches.ion)


def test_dirichlet_requires_every_electrode(toy_operator):
    with pytest.raises(ParameterError) as info:
        solve_dirichlet(toy_operator, {"rf_px": 1.0, "rf_nx": 1.0})
    assert info.value.path.startswith("voltages.dc_")


def test_dirichlet_rejects_unknown_electrode(toy_operator):
    with pytest.raises(ParameterError) as info:
        solve_dirichlet(toy_operator, {**TOY_VOLTAGES, "bogus": 1.0})
    assert info.value.path == "voltages.bogus"


def test_solutions_superpose(toy_operator):
    rf = solve_dirichlet(toy_operator, {"rf_px": 1.0, "dc_py": 0.0, "rf_nx": 1.0, "dc_ny": 0.0})
    dc = solve_dirichlet(toy_operator, {"rf_px": 0.0, "dc_py": -0.25, "rf_nx": 0.0, "dc_ny": 0.5})
    both = solve_dirichlet(toy_operator, TOY_VOLTAGES)
    combined = rf + dc
    scale = np.abs(both.densities).max()
    np.testing.assert_allclose(combined.densities, both.densities, rtol=1e-8, atol=1e-10 * scale)
    np.testing.assert_allclose(rf.scaled(2.0).densities, 2.0 * rf.densities)


def test_collocation_reproduces_boundary_voltages(toy_operator, toy_patches):
    solution = solve_dirichlet(toy_operator, TOY_VOLTAGES)
    np.testing.assert_allclose(toy_operator.matrix @ solution.densities, toy_patches.voltages_from(TOY_VOLTAGES), atol=1e-9)


def test_zero_voltages_give_zero_densities(toy_operator):
    solution = solve_patch_voltages(toy_operator, np.zeros(toy_operator.size))
    assert not np.any(solution.densities)
    assert solution.total_charge == 0.0


def test_memory_cap_is_enforced(toy_patches):
    with pytest.raises(BemSizeError) as info:
        assemble(toy_patches, memory_cap_gb=1e-6)
    assert info.value.module == "electrostatics"


def test_iterative_solver_matches_factorization(toy_patches, toy_operator):
    iterative = assemble(toy_patches, dense_limit=1)
    assert iterative.method == "gmres"
    assert toy_operator.method == "dense"
    voltages = toy_patches.voltages_from(TOY_VOLTAGES)
    expected = toy_operator.solve(voltages)
    np.testing.assert_allclose(iterative.solve(voltages), expected, rtol=1e-6, atol=1e-9 * np.abs(expected).max())


def test_transposed_solve_inverts_the_transposed_matrix(toy_patches, toy_operator):
    rhs = toy_patches.voltages_from(TOY_VOLTAGES)
    iterative = assemble(toy_patches, dense_limit=1)
    for op in (toy_operator, iterative):
        x = op.solve(rhs, transpose=True)
        np.testing.assert_allclose(op.matrix.T @ x, rhs, rtol=0.0, atol=1e-8 * np.abs(rhs).max())


def test_adjoint_couplings_on_the_iterative_path(toy_patches, toy_operator):
    iterative = assemble(toy_patches, dense_limit=1)
    ion = toy_patches.ion + np.array([0.0, 30.0, -40.0]) * MICRON
    direct = patch_couplings_direct(toy_operator, ion) @ np.array([1.0, 0.0, 0.0])
    adjoint = patch_couplings_adjoint(iterative, ion, [1.0, 0.0, 0.0])
    assert rms_relative_deviation(direct, adjoint.values) < 1e-5


def test_coincident_patches_are_rejected(toy_patches):
    triangles = np.concatenate([toy_patches.triangles, toy_patches.triangles[:1]])
    doubled = PatchSet(
        triangles=triangles,
        electrode_index=np.concatenate([toy_patches.electrode_index, toy_patches.electrode_index[:1]]),
        electrodes=toy_patches.electrodes,
        ion=toy_patches.ion,
        axial_direction=toy_patches.axial_direction,
        target_edge=toy_patches.target_edge,
    )
    with pytest.raises(ParameterError, match="coincident"):
        assemble(doubled)


def test_matrix_dump_round_trip(toy_operator, tmp_path):
    path = dump_matrix(toy_operator, tmp_path / "influence.bemm")
    assert path.read_bytes()[:4] == b"BEMM"
    np.testing.assert_array_equal(load_matrix(path), toy_operator.matrix)


def test_matrix_dump_rejects_foreign_file(tmp_path):
    path = tmp_path / "other.bemm"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(ParameterError):
        load_matrix(path)


def test_adjoint_source_on_surface_is_rejected(toy_operator, toy_patches):
    with pytest.raises(ParameterError) as info:
        patch_couplings_adjoint(toy_operator, toy_patches.centroids[0], [0.0, 0.0, 1.0])
    assert info.value.path == "ion"
