from __future__ import annotations

import json
from pathlib import Path

import pytest

from trapnoise.config import load_config, parse_document, unit_conversions, with_overrides
from trapnoise.constants import MHZ, MICRON
from trapnoise.errors import ConfigError, ParameterError

SKELETON_TOML = """
seed = 7

[geometry]
type = "skeleton"
tooth_width_um = 190.0

[drive]
rf_amplitude_v = 120.0
rf_frequency_mhz = 12.5

[noise]
s0 = 2e-12
"""


def _write(tmp_path: Path, text: str, name: str = "run.toml") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults_are_converted_to_si():
    config = parse_document({"geometry": {"type": "skeleton"}})
    assert config.drive.rf_amplitude == 150.0
    assert config.drive.rf_frequency == pytest.approx(11.0 * MHZ)
    assert config.axial_frequency == pytest.approx(0.5 * MHZ)
    assert config.resolution.target_edge == pytest.approx(9.0 * MICRON)
    assert config.resolution.grading == 0.0
    assert config.noise.s0 == 1e-12
    assert config.study.distances[0] == pytest.approx(100.0 * MICRON)
    assert config.seed == 0
    assert config.present == frozenset({"geometry"})


def test_toml_file_values(tmp_path):
    config = load_config(_write(tmp_path, SKELETON_TOML))
    assert config.seed == 7
    assert config.drive.rf_frequency == pytest.approx(12.5 * MHZ)
    assert config.noise.s0 == 2e-12
    geom = config.geometry.build()
    assert geom.params.tooth_width == pytest.approx(190.0 * MICRON)
    assert config.present == frozenset({"seed", "geometry", "drive", "noise"})


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError) as info:
        parse_document({"geometry": {"type": "disc"}, "drive": {"rf_voltage": 100.0}})
    assert info.value.path == "drive.rf_voltage"


def test_unknown_section_is_rejected():
    with pytest.raises(ConfigError) as info:
        parse_document({"geometry": {"type": "disc"}, "plotting": {}})
    assert info.value.path == "plotting"


def test_geometry_section_is_required():
    with pytest.raises(ConfigError) as info:
        parse_document({"drive": {}})
    assert info.value.path == "geometry"


def test_unknown_geometry_type():
    with pytest.raises(ConfigError) as info:
        parse_document({"geometry": {"type": "ring"}})
    assert info.value.path == "geometry.type"


@pytest.mark.parametrize(
    ("document", "path"),
    [
        ({"geometry": {"type": "disc"}, "drive": {"rf_amplitude_v": "high"}}, "drive.rf_amplitude_v"),
        ({"geometry": {"type": "skeleton", "teeth_count": 7.5}}, "geometry.teeth_count"),
        ({"geometry": {"type": "disc"}, "output": {"plots": "yes"}}, "output.plots"),
        ({"geometry": {"type": "disc"}, "seed": "1"}, "seed"),
    ],
)
def test_wrong_types_name_their_key(document, path):
    with pytest.raises(ConfigError) as info:
        parse_document(document)
    assert info.value.path == path


def test_invalid_geometry_value_reports_config_key():
    config = parse_document({"geometry": {"type": "skeleton", "tooth_gap_um": 0.0}})
    with pytest.raises(ParameterError) as info:
        config.geometry.build()
    assert info.value.path == "geometry.tooth_gap_um"


def test_negative_noise_is_a_parameter_error():
    with pytest.raises(ParameterError) as info:
        parse_document({"geometry": {"type": "disc"}, "noise": {"s0": -1.0}})
    assert info.value.path == "noise.s0"


def test_file_geometry_needs_a_path():
    with pytest.raises(ConfigError) as info:
        parse_document({"geometry": {"type": "file"}})
    assert info.value.path == "geometry.path"


def test_relative_mesh_path_is_anchored(tmp_path):
    config = load_config(_write(tmp_path, '[geometry]\ntype = "file"\npath = "meshes/trap.stl"\n'))
    assert Path(config.document["geometry"]["path"]) == (tmp_path / "meshes" / "trap.stl").resolve()


def test_invalid_toml_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(_write(tmp_path, "[geometry\ntype = 1\n"))


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")


def test_manifest_round_trip(tmp_path):
    config = load_config(_write(tmp_path, SKELETON_TOML))
    manifest = {"config": config.document, "config_sections": sorted(config.present)}
    path = _write(tmp_path, json.dumps(manifest), "manifest.json")
    again = load_config(path)
    assert again.document == config.document
    assert again.present == config.present
    assert again.drive == config.drive
    assert again.resolution == config.resolution


def test_manifest_without_config(tmp_path):
    with pytest.raises(ConfigError, match="embedded config"):
        load_config(_write(tmp_path, json.dumps({"files": {}}), "manifest.json"))


def test_require_names_missing_section():
    config = parse_document({"geometry": {"type": "disc"}, "drive": {}})
    config.require("drive")
    with pytest.raises(ConfigError) as info:
        config.require("drive", "species")
    assert info.value.path == "species"


def test_overrides_update_document():
    config = parse_document({"geometry": {"type": "disc"}})
    changed = with_overrides(config, out="elsewhere", resolution_um=25.0, plots=True)
    assert changed.output.dir == Path("elsewhere")
    assert changed.output.plots
    assert changed.resolution.target_edge == pytest.approx(25.0 * MICRON)
    assert changed.document["resolution"]["target_edge_um"] == 25.0
    assert config.document["resolution"]["target_edge_um"] == 9.0
    with pytest.raises(ConfigError):
        with_overrides(config, resolution_um=0.0)


def test_unit_table():
    assert unit_conversions() == {"um": 1e-6, "mhz": 1e6, "v": 1.0, "deg": 1.0}
