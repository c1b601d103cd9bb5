"""Gate geometry, figure-eight track layout and crossing detection.

NED world frame: gate centers at 1.5 m altitude have z = -1.5; the
ground plane is z = 0 and "up" is negative z.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .dynamics import wrap_angle

__all__ = [
    "Gate",
    "Track",
    "CrossingKind",
    "CrossingEvent",
    "check_crossing",
    "out_of_bounds",
    "default_figure8",
    "load_track",
    "save_track",
    "builtin_track_path",
]

DEFAULT_HALF_SIZE = 0.75  # 1.5 x 1.5 m square gates


@dataclass(frozen=True)
class Gate:
    """A vertical square gate parameterized by center and yaw heading."""

    center: np.ndarray
    yaw: float
    half_size: float = DEFAULT_HALF_SIZE

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "yaw", float(wrap_angle(self.yaw)))
        if not self.half_size > 0.0:
            raise ValueError("half_size must be > 0")

    @property
    def normal(self) -> np.ndarray:
        """Forward (direction-of-travel) unit normal, horizontal."""
        return np.array([np.cos(self.yaw), np.sin(self.yaw), 0.0])

    @property
    def lateral(self) -> np.ndarray:
        """In-plane horizontal unit vector."""
        return np.array([-np.sin(self.yaw), np.cos(self.yaw), 0.0])


@dataclass(frozen=True)
class Track:
    """Cyclically ordered gates inside an axis-aligned bounding box.

    ``bounds`` is (size_x, size_y, size_z); the box is centered on the
    origin horizontally and spans z in [-size_z, 0] (ground at z = 0).
    """

    gates: tuple[Gate, ...]
    bounds: np.ndarray = field(default_factory=lambda: np.array([10.0, 10.0, 7.0]))

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=float).reshape(3))
        if len(self.gates) < 1:
            raise ValueError("track needs at least one gate")
        for g in self.gates:
            if not self._inside(g.center):
                raise ValueError(f"gate center {g.center} outside bounds {self.bounds}")

    def _inside(self, p) -> bool:
        hx, hy, sz = self.bounds[0] / 2, self.bounds[1] / 2, self.bounds[2]
        return bool(abs(p[0]) < hx and abs(p[1]) < hy and -sz < p[2] < 0.0)

    @property
    def n_gates(self) -> int:
        return len(self.gates)

    def centers(self) -> np.ndarray:
        return np.stack([g.center for g in self.gates])

    def yaws(self) -> np.ndarray:
        return np.array([g.yaw for g in self.gates])

    def half_sizes(self) -> np.ndarray:
        return np.array([g.half_size for g in self.gates])


class CrossingKind(Enum):
    NONE = "none"
    PASSED = "passed"
    MISSED = "missed"


@dataclass(frozen=True)
class CrossingEvent:
    kind: CrossingKind
    crossing_point: np.ndarray | None = None


def check_crossing(p_prev: np.ndarray, p_curr: np.ndarray, gate: Gate) -> CrossingEvent:
    """Classify the segment p_prev -> p_curr against one gate plane.

    A forward crossing through the aperture is PASSED; any other plane
    crossing (off-aperture or reverse direction) is MISSED.
    """
    p_prev = np.asarray(p_prev, dtype=float)
    p_curr = np.asarray(p_curr, dtype=float)
    n = gate.normal
    d0 = float((p_prev - gate.center) @ n)
    d1 = float((p_curr - gate.center) @ n)
    forward = d0 < 0.0 and d1 >= 0.0
    reverse = d0 >= 0.0 and d1 < 0.0
    if not (forward or reverse):
        return CrossingEvent(CrossingKind.NONE)
    alpha = d0 / (d0 - d1)
    point = p_prev + alpha * (p_curr - p_prev)
    if reverse:
        return CrossingEvent(CrossingKind.MISSED, point)
    rel = point - gate.center
    off_lat = abs(float(rel @ gate.lateral))
    off_vert = abs(float(rel[2]))
    if off_lat <= gate.half_size and off_vert <= gate.half_size:
        return CrossingEvent(CrossingKind.PASSED, point)
    return CrossingEvent(CrossingKind.MISSED, point)


def out_of_bounds(p: np.ndarray, track: Track) -> bool:
    """True if p left the bounding box or touched the ground (z >= 0)."""
    p = np.asarray(p, dtype=float)
    hx, hy, sz = track.bounds[0] / 2, track.bounds[1] / 2, track.bounds[2]
    return bool(abs(p[0]) > hx or abs(p[1]) > hy or p[2] < -sz or p[2] >= 0.0)


def default_figure8(n_gates: int = 7, scale: float = 4.0, altitude: float = 1.5) -> Track:
    """Seven gates on a lemniscate footprint inside the 10x10x7 m box.

    The exact coordinates are a project choice (lemniscate of Gerono,
    evenly spaced in parameter, headings along the direction of travel).
    """
    gates = []
    for k in range(n_gates):
        t = 2.0 * np.pi * k / n_gates
        x = scale * np.sin(t)
        y = 0.5 * scale * np.sin(2.0 * t)
        dx = scale * np.cos(t)
        dy = scale * np.cos(2.0 * t)
        gates.append(Gate(center=[x, y, -altitude], yaw=float(np.arctan2(dy, dx))))
    return Track(gates=tuple(gates))


def track_to_dict(track: Track) -> dict:
    return {
        "bounds": [float(b) for b in track.bounds],
        "gates": [
            {
                "center": [float(c) for c in g.center],
                "yaw": float(g.yaw),
                "half_size": float(g.half_size),
            }
            for g in track.gates
        ],
    }


def track_from_dict(d: dict) -> Track:
    gates = tuple(
        Gate(
            center=g["center"],
            yaw=g["yaw"],
            half_size=g.get("half_size", DEFAULT_HALF_SIZE),
        )
        for g in d["gates"]
    )
    return Track(gates=gates, bounds=d.get("bounds", [10.0, 10.0, 7.0]))


def save_track(track: Track, path: str | Path):
    Path(path).write_text(json.dumps(track_to_dict(track), indent=2) + "\n")


def load_track(path: str | Path) -> Track:
    return track_from_dict(json.loads(Path(path).read_text()))


def builtin_track_path() -> Path:
    res = resources.files("quadrace").joinpath("data", "track_figure8.json")
    return Path(str(res))
