from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from enum import Enum

import numpy as np
from scipy import constants

from trapnoise.constants import (
    DEFAULT_MAX_EDGE_SCALE,
    DEFAULT_MEMORY_CAP_GB,
    DEFAULT_MESH_GRADING,
    DEFAULT_TARGET_EDGE,
    DENSE_PATCH_LIMIT,
    MICRON,
    NOISE_REFERENCE_FREQUENCY,
)
from trapnoise.errors import ParameterError


class ElectrodeRole(str, Enum):
    RF = "RF"
    DC = "DC"
    GROUND = "GROUND"


@dataclass(frozen=True)
class Electrode:
    id: str
    role: ElectrodeRole


def _require_positive(params, *names: str) -> None:
    for name in names:
        value = getattr(params, name)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise ParameterError(name, f"must be a positive length, got {value!r}")


@dataclass(frozen=True)
class SkeletonParams:
    wire_diameter: float = 20.0 * MICRON
    tooth_width: float = 170.0 * MICRON
    tooth_gap: float = 9.0 * MICRON
    opposing_distance: float = 400.0 * MICRON
    teeth_count: int = 8
    strut_length: float = 150.0 * MICRON
    # offset of the gap lattice in tooth periods; 0 puts a gap at the ion, 0.5 a tooth
    gap_phase: float = 0.5
    # shortest rail; the outer teeth are lengthened to reach it
    axial_extent: float = 1500.0 * MICRON

    def validate(self) -> None:
        _require_positive(
            self, "wire_diameter", "tooth_width", "tooth_gap", "opposing_distance", "strut_length", "axial_extent"
        )
        if self.tooth_gap >= self.tooth_width:
            raise ParameterError("tooth_gap", "must be smaller than tooth_width")
        if self.wire_diameter >= self.tooth_width:
            raise ParameterError("wire_diameter", "must be smaller than tooth_width")
        if self.wire_diameter >= self.opposing_distance / 2.0:
            raise ParameterError("wire_diameter", "wires would reach the trap axis")
        if not isinstance(self.teeth_count, int) or self.teeth_count < 1:
            raise ParameterError("teeth_count", f"must be a positive integer, got {self.teeth_count!r}")
        if not math.isfinite(self.gap_phase):
            raise ParameterError("gap_phase", "must be finite")

    @property
    def ion_electrode_distance(self) -> float:
        return self.opposing_distance / 2.0

    @property
    def period(self) -> float:
        return self.tooth_width + self.tooth_gap

    @property
    def gap_centers(self) -> np.ndarray:
        """Axial centres of the gaps between neighbouring teeth, `teeth_count - 1` of them."""
        return (self.gap_phase + np.arange(self.teeth_count - 1) - (self.teeth_count - 2) / 2.0) * self.period

    def tooth_spans(self) -> list[tuple[float, float]]:
        """(start, stop) of every tooth along the axis, outer teeth stretched to cover `axial_extent`."""
        half_gap = self.tooth_gap / 2.0
        if self.teeth_count == 1:
            center = (self.gap_phase - 0.5) * self.period
            starts = [center - self.tooth_width / 2.0]
            stops = [center + self.tooth_width / 2.0]
        else:
            gaps = self.gap_centers
            starts = [gaps[0] - half_gap - self.tooth_width, *(gaps + half_gap)]
            stops = [*(gaps - half_gap), gaps[-1] + half_gap + self.tooth_width]
        starts[0] = min(starts[0], -self.axial_extent / 2.0)
        stops[-1] = max(stops[-1], self.axial_extent / 2.0)
        return [(float(a), float(b)) for a, b in zip(starts, stops)]


@dataclass(frozen=True)
class BladeParams:
    ion_electrode_distance: float = 200.0 * MICRON
    blade_length: float = 2000.0 * MICRON
    blade_tip_angle: float = 45.0
    blade_depth: float = 500.0 * MICRON
    endcap_separation: float = 1000.0 * MICRON
    segment_gap: float = 50.0 * MICRON

    def validate(self) -> None:
        _require_positive(
            self,
            "ion_electrode_distance",
            "blade_length",
            "blade_depth",
            "endcap_separation",
            "segment_gap",
        )
        if not 0.0 < self.blade_tip_angle < 90.0:
            raise ParameterError("blade_tip_angle", "must lie in (0, 90) degrees")
        if self.endcap_separation >= self.blade_length:
            raise ParameterError("endcap_separation", "must be shorter than blade_length")
        if 2.0 * self.segment_gap >= self.endcap_separation:
            raise ParameterError("segment_gap", "leaves no room for the central DC segment")


@dataclass(frozen=True)
class DiscParams:
    radius: float = 4000.0 * MICRON
    ion_distance: float = 200.0 * MICRON
    ring_growth: float = 1.25

    def validate(self) -> None:
        _require_positive(self, "radius", "ion_distance")
        if self.radius <= self.ion_distance:
            raise ParameterError("radius", "must exceed ion_distance")
        if not 1.0 < self.ring_growth <= 2.0:
            raise ParameterError("ring_growth", "must lie in (1, 2]")


@dataclass(frozen=True)
class IonSpecies:
    mass: float
    charge: float
    label: str = ""

    def validate(self) -> None:
        if not (math.isfinite(self.mass) and self.mass > 0):
            raise ParameterError("mass", "must be positive")
        if not math.isfinite(self.charge) or self.charge == 0:
            raise ParameterError("charge", "must be nonzero")

    @classmethod
    def from_atomic(cls, mass_u: float, charge_e: float = 1.0, label: str = "") -> IonSpecies:
        return cls(mass=mass_u * constants.atomic_mass, charge=charge_e * constants.e, label=label)


YB171 = IonSpecies.from_atomic(171.0, 1.0, "171Yb+")


@dataclass(frozen=True)
class DriveConfig:
    rf_amplitude: float
    rf_frequency: float
    dc_voltages: dict[str, float] = field(default_factory=dict)

    def validate(self) -> None:
        if not (math.isfinite(self.rf_amplitude) and self.rf_amplitude >= 0):
            raise ParameterError("rf_amplitude", "must be >= 0")
        if not (math.isfinite(self.rf_frequency) and self.rf_frequency > 0):
            raise ParameterError("rf_frequency", "must be > 0")
        for electrode_id, voltage in self.dc_voltages.items():
            if not math.isfinite(voltage):
                raise ParameterError(f"dc_voltages.{electrode_id}", "must be finite")

    @property
    def angular_frequency(self) -> float:
        return 2.0 * math.pi * self.rf_frequency

    def with_frequency(self, rf_frequency: float) -> DriveConfig:
        return DriveConfig(self.rf_amplitude, rf_frequency, dict(self.dc_voltages))


@dataclass(frozen=True)
class NoiseModel:
    """Delta-correlated patch noise; `s0` in V^2 m^2 / Hz."""

    s0: float
    exponent: float = 0.0
    reference_frequency: float = NOISE_REFERENCE_FREQUENCY

    def validate(self) -> None:
        if not (math.isfinite(self.s0) and self.s0 >= 0):
            raise ParameterError("s0", "must be >= 0")
        if not math.isfinite(self.exponent):
            raise ParameterError("exponent", "must be finite")

    def spectral_weight(self, frequency: float) -> float:
        if self.exponent == 0.0:
            return self.s0
        return self.s0 * (self.reference_frequency / frequency) ** self.exponent

    def scaled(self, factor: float) -> NoiseModel:
        return NoiseModel(self.s0 * factor, self.exponent, self.reference_frequency)


def params_to_dict(params) -> dict[str, float | int]:
    return {item.name: getattr(params, item.name) for item in fields(params)}


@dataclass(frozen=True)
class Resolution:
    target_edge: float = DEFAULT_TARGET_EDGE
    grading: float = DEFAULT_MESH_GRADING
    max_edge_scale: float = DEFAULT_MAX_EDGE_SCALE
    dense_limit: int = DENSE_PATCH_LIMIT
    memory_cap_gb: float = DEFAULT_MEMORY_CAP_GB

    def validate(self) -> None:
        _require_positive(self, "target_edge", "max_edge_scale", "memory_cap_gb")
        if not (math.isfinite(self.grading) and self.grading >= 0):
            raise ParameterError("grading", "must be >= 0")
        if self.max_edge_scale < 1.0:
            raise ParameterError("max_edge_scale", "must be >= 1")
        if self.dense_limit < 1:
            raise ParameterError("dense_limit", "must be >= 1")
