"""Track centerlines: straight roads and sums of sinusoidal curvature components."""
from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class TrackSpec:
    """Geometry description consumed by build_track.

    kind "straight" has centerline y = 0.  kind "curved" sums sinusoidal
    components center(x) = sum_i A_i sin(2 pi x / L_i); the default single
    component (20 m, 400 m) demands sustained nonzero far-point angles.
    """

    kind: str = "straight"
    length: float = 2000.0
    lane_width: float = 3.6
    components: tuple[tuple[float, float], ...] = field(
        default_factory=lambda: ((20.0, 400.0),)
    )

    def __post_init__(self) -> None:
        if self.kind not in ("straight", "curved"):
            raise ValueError(f"unknown track kind {self.kind!r}")
        if self.lane_width <= 0.0:
            raise ValueError("lane_width must be positive")
        if self.kind == "curved":
            for amp, wavelength in self.components:
                if wavelength <= 0.0:
                    raise ValueError("component wavelength must be positive")

    @property
    def half_lane(self) -> float:
        return self.lane_width / 2.0

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "length": self.length, "lane_width": self.lane_width}
        if self.kind == "curved":
            d["components"] = [list(c) for c in self.components]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrackSpec":
        spec = dict(d)
        comps = spec.pop("components", None)
        if comps is not None:
            spec["components"] = tuple((float(a), float(w)) for a, w in comps)
        return cls(**spec)


class Track:
    """Sampled centerline: lateral center position and slope as functions of x."""

    def __init__(self, spec: TrackSpec):
        self.spec = spec
        if spec.kind == "straight":
            self._components: tuple[tuple[float, float], ...] = ()
        else:
            self._components = spec.components

    def center(self, x: float) -> float:
        return sum(
            a * math.sin(2.0 * math.pi * x / w) for a, w in self._components
        )

    def center_slope(self, x: float) -> float:
        return sum(
            a * (2.0 * math.pi / w) * math.cos(2.0 * math.pi * x / w)
            for a, w in self._components
        )

    def heading(self, x: float) -> float:
        return math.atan(self.center_slope(x))

    def max_curvature(self) -> float:
        return sum(a * (2.0 * math.pi / w) ** 2 for a, w in self._components)


STRAIGHT = TrackSpec(kind="straight")


def build_track(spec: TrackSpec) -> Track:
    return Track(spec)
