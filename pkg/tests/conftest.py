from __future__ import annotations

import numpy as np
import pytest

from trapnoise.constants import MHZ, MICRON
from trapnoise.electrostatics import assemble
from trapnoise.geometry import MeshBuilder, discretize, geometry_from_builder
from trapnoise.models import YB171, DriveConfig, ElectrodeRole, NoiseModel, Resolution
from trapnoise.studies import analyze_geometry, build_toy_quadrupole

TOY_EDGE = 100.0 * MICRON


@pytest.fixture(scope="session")
def toy_geometry():
    # four 400 um plates at 200 um, 128 coarse triangles
    return build_toy_quadrupole(cells=4)


@pytest.fixture(scope="session")
def toy_patches(toy_geometry):
    return discretize(toy_geometry, TOY_EDGE)


@pytest.fixture(scope="session")
def toy_operator(toy_patches):
    return assemble(toy_patches)


@pytest.fixture(scope="session")
def toy_drive():
    return DriveConfig(50.0, 11.0 * MHZ)


@pytest.fixture(scope="session")
def toy_resolution():
    return Resolution(target_edge=TOY_EDGE, grading=0.0)


@pytest.fixture(scope="session")
def toy_result(toy_geometry, toy_operator, toy_drive, toy_resolution):
    return analyze_geometry(
        toy_geometry,
        drive=toy_drive,
        species=YB171,
        noise=NoiseModel(1e-12),
        resolution=toy_resolution,
        axial_frequency=None,
        op=toy_operator,
    )


@pytest.fixture
def unit_square():
    builder = MeshBuilder(max_cell=np.inf)
    index = builder.electrode("plate", ElectrodeRole.DC)
    builder.add_quad((0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1), index, interior=(0.5, 0.5, 2.0))
    return geometry_from_builder(builder, np.zeros(3), label="square")
