"""Planar terrain world: labeled patches, reference paths, scenario files."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .kinematics import Pose

SCENARIO_FORMAT = 1


class TerrainLabel(IntEnum):
    """Ground/pixel label codes. Background is traversable open ground."""

    BACKGROUND = 0
    NON_TRAVERSABLE = 1
    WATER = 2
    ROCK = 3
    MUD = 4

    @property
    def key(self) -> str:
        return self.name.lower()


TERRAIN_BY_KEY = {label.key: label for label in TerrainLabel}

# Preference column values a scenario may declare for evaluation.
EXPECTED_PREFERENCES = tuple(
    label.key for label in TerrainLabel if label != TerrainLabel.BACKGROUND
) + ("avoid",)


class ScenarioFormatError(ValueError):
    """A scenario document is missing fields, malformed, or the wrong version."""


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "radius", float(self.radius))
        if not (math.isfinite(self.radius) and self.radius > 0.0):
            raise ValueError(f"circle radius must be positive, got {self.radius}")

    def contains(self, x, y):
        cx, cy = self.center
        return (np.asarray(x) - cx) ** 2 + (np.asarray(y) - cy) ** 2 <= self.radius**2

    def to_dict(self) -> dict:
        return {"type": "circle", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, inclusive bounds."""

    low: tuple[float, float]
    high: tuple[float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "low", (float(self.low[0]), float(self.low[1])))
        object.__setattr__(self, "high", (float(self.high[0]), float(self.high[1])))
        if not (self.low[0] < self.high[0] and self.low[1] < self.high[1]):
            raise ValueError(f"rectangle must have positive extent, got {self.low}..{self.high}")

    def contains(self, x, y):
        x = np.asarray(x)
        y = np.asarray(y)
        return (x >= self.low[0]) & (x <= self.high[0]) & (y >= self.low[1]) & (y <= self.high[1])

    def to_dict(self) -> dict:
        return {"type": "rect", "low": list(self.low), "high": list(self.high)}


@dataclass(frozen=True)
class ConvexPolygon:
    """Convex polygon; vertices are normalized to counter-clockwise order."""

    vertices: np.ndarray  # (k, 2) float64, read-only

    def __post_init__(self) -> None:
        verts = np.array(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise ValueError("polygon needs at least three (x, y) vertices")
        area2 = _signed_area2(verts)
        if abs(area2) < 1e-12:
            raise ValueError("polygon is degenerate (zero area)")
        if area2 < 0.0:
            verts = verts[::-1].copy()
        crosses = _edge_crosses(verts)
        if np.any(crosses < -1e-9):
            raise ValueError("polygon is not convex")
        verts.flags.writeable = False
        object.__setattr__(self, "vertices", verts)

    def contains(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        inside = np.ones(np.broadcast(x, y).shape, dtype=bool)
        verts = self.vertices
        k = len(verts)
        for i in range(k):
            ax, ay = verts[i]
            bx, by = verts[(i + 1) % k]
            cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax)
            inside &= cross >= -1e-12
        if inside.ndim == 0:
            return bool(inside)
        return inside

    def to_dict(self) -> dict:
        return {"type": "polygon", "vertices": self.vertices.tolist()}


def _signed_area2(verts: np.ndarray) -> float:
    x = verts[:, 0]
    y = verts[:, 1]
    return float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _edge_crosses(verts: np.ndarray) -> np.ndarray:
    a = verts
    b = np.roll(verts, -1, axis=0)
    c = np.roll(verts, -2, axis=0)
    return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])


Shape = Circle | Rect | ConvexPolygon


def shape_from_dict(doc: dict) -> Shape:
    kind = doc.get("type")
    try:
        if kind == "circle":
            return Circle(tuple(doc["center"]), doc["radius"])
        if kind == "rect":
            return Rect(tuple(doc["low"]), tuple(doc["high"]))
        if kind == "polygon":
            return ConvexPolygon(np.asarray(doc["vertices"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"bad {kind or 'shape'} definition: {exc}") from exc
    raise ScenarioFormatError(f"unknown shape type {kind!r}")


@dataclass(frozen=True)
class TerrainPatch:
    label: TerrainLabel
    shape: Shape

    def __post_init__(self) -> None:
        if self.label == TerrainLabel.BACKGROUND:
            raise ValueError("patches must carry a non-background label")


@dataclass(frozen=True)
class ReferencePath:
    """Ordered waypoints the vehicle is asked to follow."""

    waypoints: np.ndarray  # (k, 2) float64, read-only

    def __post_init__(self) -> None:
        wp = np.array(self.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 2 or wp.shape[0] < 2:
            raise ValueError("reference path needs at least two (x, y) waypoints")
        gaps = np.linalg.norm(np.diff(wp, axis=0), axis=1)
        if np.any(gaps <= 0.0):
            raise ValueError("consecutive waypoints must be distinct")
        wp.flags.writeable = False
        object.__setattr__(self, "waypoints", wp)

    def __len__(self) -> int:
        return int(self.waypoints.shape[0])

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))

    @property
    def last(self) -> tuple[float, float]:
        return (float(self.waypoints[-1, 0]), float(self.waypoints[-1, 1]))


@dataclass(frozen=True)
class Scenario:
    """A world layout: patches in paint order, path, start pose, expectations."""

    name: str
    patches: tuple[TerrainPatch, ...]
    reference_path: ReferencePath
    start_pose: Pose
    goal_radius: float = 2.0
    expected_preference: str | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.goal_radius) and self.goal_radius > 0.0):
            raise ValueError(f"goal radius must be positive, got {self.goal_radius}")
        first = self.reference_path.waypoints[0]
        gap = math.hypot(self.start_pose.x - first[0], self.start_pose.y - first[1])
        if gap > 1.0:
            raise ValueError(f"start pose is {gap:.2f} m from the first waypoint (max 1 m)")
        if self.expected_preference is not None and self.expected_preference not in EXPECTED_PREFERENCES:
            raise ValueError(f"unknown expected preference {self.expected_preference!r}")

    @property
    def terrains(self) -> tuple[TerrainLabel, ...]:
        seen: list[TerrainLabel] = []
        for patch in self.patches:
            if patch.label not in seen:
                seen.append(patch.label)
        return tuple(seen)


def label_at(scenario: Scenario, point) -> TerrainLabel:
    """Ground label at one world point; the last containing patch wins."""
    x, y = float(point[0]), float(point[1])
    for patch in reversed(scenario.patches):
        if patch.shape.contains(x, y):
            return patch.label
    return TerrainLabel.BACKGROUND


def label_grid(scenario: Scenario, x, y) -> np.ndarray:
    """Vectorized label_at for coordinate arrays (paint order, later patch wins)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    labels = np.zeros(np.broadcast(x, y).shape, dtype=np.uint8)
    for patch in scenario.patches:
        labels[patch.shape.contains(x, y)] = int(patch.label)
    return labels


def nearest_waypoint_distance(
    path: ReferencePath, point, window: tuple[int, int] | None = None
) -> tuple[float, int]:
    """Distance to, and index of, the nearest waypoint inside [start, stop).

    Ties resolve to the smaller index. An empty or out-of-range window raises.
    """
    start, stop = window if window is not None else (0, len(path))
    if not (0 <= start < stop <= len(path)):
        raise ValueError(f"bad waypoint window [{start}, {stop}) for path of {len(path)}")
    wp = path.waypoints[start:stop]
    px, py = float(point[0]), float(point[1])
    d2 = (wp[:, 0] - px) ** 2 + (wp[:, 1] - py) ** 2
    i = int(np.argmin(d2))
    return math.sqrt(float(d2[i])), start + i


def path_distance(path: ReferencePath, point, window: tuple[int, int] | None = None) -> float:
    """Distance from a point to the path polyline (segment-wise, not waypoint-wise)."""
    start, stop = window if window is not None else (0, len(path))
    start = max(0, start)
    stop = min(len(path), stop)
    wp = path.waypoints[start:stop]
    p = np.array([float(point[0]), float(point[1])])
    if len(wp) == 1:
        return float(np.linalg.norm(wp[0] - p))
    a = wp[:-1]
    b = wp[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", p[None, :] - a, ab) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return float(np.min(np.linalg.norm(closest - p, axis=1)))


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "format": SCENARIO_FORMAT,
        "name": scenario.name,
        "patches": [
            {"label": patch.label.key, "shape": patch.shape.to_dict()}
            for patch in scenario.patches
        ],
        "reference_path": scenario.reference_path.waypoints.tolist(),
        "start_pose": [scenario.start_pose.x, scenario.start_pose.y, scenario.start_pose.theta],
        "goal_radius": scenario.goal_radius,
        "expected_preference": scenario.expected_preference,
    }


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioFormatError("scenario document must be a JSON object")
    if doc.get("format") != SCENARIO_FORMAT:
        raise ScenarioFormatError(f"unsupported scenario format {doc.get('format')!r}")
    try:
        patches = []
        for entry in doc.get("patches", []):
            key = entry["label"]
            if key not in TERRAIN_BY_KEY or key == TerrainLabel.BACKGROUND.key:
                raise ScenarioFormatError(f"unknown patch label {key!r}")
            patches.append(TerrainPatch(TERRAIN_BY_KEY[key], shape_from_dict(entry["shape"])))
        path = ReferencePath(np.asarray(doc["reference_path"], dtype=float))
        sx, sy, stheta = doc["start_pose"]
        return Scenario(
            name=str(doc["name"]),
            patches=tuple(patches),
            reference_path=path,
            start_pose=Pose(sx, sy, stheta),
            goal_radius=float(doc.get("goal_radius", 2.0)),
            expected_preference=doc.get("expected_preference"),
        )
    except ScenarioFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioFormatError(f"bad scenario document: {exc}") from exc


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2))


def load_scenario(path: str | Path) -> Scenario:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"scenario file is not valid JSON: {exc}") from exc
    return scenario_from_dict(doc)
