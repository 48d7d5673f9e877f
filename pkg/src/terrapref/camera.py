"""Pinhole segmentation camera: ground-plane ray casting and point projection.

Conventions: the vehicle frame has +x forward, +y left, +z up, ground at z = 0.
The camera sits at (forward_offset, 0, mount_height), pitched down about the
vehicle y axis, zero yaw/roll. Images are row-major, origin top-left, v grows
downward; pixel (row r, col c) is sampled at the continuous image coordinates
(u, v) = (c + 0.5, r + 0.5). Square pixels: f = (width / 2) / tan(hfov / 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .kinematics import Pose, Trajectory
from .world import Scenario, TerrainLabel, label_grid

__all__ = [
    "CameraModel",
    "SegmentationImage",
    "render_segmentation",
    "project_points_local",
    "project_trajectory",
    "pixel_for_uv",
    "ground_point_for_pixel",
    "horizon_v",
    "LABEL_COLORS",
    "save_grayscale",
    "save_colormapped",
]

# Render colors follow the terrain textures used in the docs and the UI:
# grass green, bright orange, blue, dark grey, dark brown.
LABEL_COLORS = {
    TerrainLabel.BACKGROUND: (116, 166, 92),
    TerrainLabel.NON_TRAVERSABLE: (235, 110, 15),
    TerrainLabel.WATER: (52, 101, 197),
    TerrainLabel.ROCK: (94, 94, 99),
    TerrainLabel.MUD: (94, 62, 34),
}


@dataclass(frozen=True)
class CameraModel:
    width: int = 640
    height: int = 480
    horizontal_fov: float = math.radians(90.0)
    mount_height: float = 1.0
    pitch_down: float = math.radians(30.0)
    forward_offset: float = 0.0

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be at least 1x1")
        if not 0.0 < self.horizontal_fov < math.pi:
            raise ValueError("horizontal FOV must lie in (0, pi)")
        if self.mount_height <= 0.0:
            raise ValueError("camera must be mounted above the ground")
        if not 0.0 <= self.pitch_down < math.pi / 2:
            raise ValueError("pitch-down must lie in [0, pi/2)")

    @property
    def focal(self) -> float:
        return (self.width / 2.0) / math.tan(self.horizontal_fov / 2.0)

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0


@dataclass(frozen=True)
class SegmentationImage:
    """Dense label raster; labels[row, col] is a TerrainLabel code."""

    labels: np.ndarray  # (height, width) uint8, read-only

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.dtype != np.uint8:
            raise ValueError("segmentation image needs a 2-D uint8 label array")
        if labels.size and int(labels.max()) > max(TerrainLabel):
            raise ValueError("segmentation image holds unknown label codes")
        labels = labels.copy()
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return int(self.labels.shape[0])

    @property
    def width(self) -> int:
        return int(self.labels.shape[1])

    def label_at_pixel(self, row: int, col: int) -> TerrainLabel:
        return TerrainLabel(int(self.labels[row, col]))


@lru_cache(maxsize=8)
def _camera_rotation(cam: CameraModel) -> np.ndarray:
    """Camera-to-vehicle rotation; columns are camera axes in vehicle coords.

    Camera axes: x right, y down, z along the optical axis. With zero pitch
    the optical axis is vehicle +x, camera x is vehicle -y, camera y is -z.
    """
    base = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    c, s = math.cos(cam.pitch_down), math.sin(cam.pitch_down)
    pitch_rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    rot = pitch_rot @ base
    rot.flags.writeable = False
    return rot


@lru_cache(maxsize=4)
def _pixel_dirs_cached(cam: CameraModel) -> np.ndarray:
    rot = _camera_rotation(cam)
    xs = (np.arange(cam.width) + 0.5 - cam.cx) / cam.focal
    ys = (np.arange(cam.height) + 0.5 - cam.cy) / cam.focal
    d_cam = np.empty((cam.height, cam.width, 3))
    d_cam[..., 0] = xs[None, :]
    d_cam[..., 1] = ys[:, None]
    d_cam[..., 2] = 1.0
    dirs = d_cam @ rot.T  # rotate every pixel ray into the vehicle frame
    dirs.flags.writeable = False
    return dirs


def render_segmentation(scenario: Scenario, vehicle: Pose, cam: CameraModel) -> SegmentationImage:
    """Ray-cast every pixel onto the ground plane and label it from the world.

    Rays that do not hit the ground in front of the camera stay background.
    """
    dirs = _pixel_dirs_cached(cam)
    c, s = math.cos(vehicle.theta), math.sin(vehicle.theta)
    dir_x = c * dirs[..., 0] - s * dirs[..., 1]
    dir_y = s * dirs[..., 0] + c * dirs[..., 1]
    dir_z = dirs[..., 2]
    ground = dir_z < 0.0
    t = -cam.mount_height / np.where(ground, dir_z, -1.0)
    ox = vehicle.x + c * cam.forward_offset
    oy = vehicle.y + s * cam.forward_offset
    labels = np.zeros((cam.height, cam.width), dtype=np.uint8)
    if scenario.patches:
        gx = ox + t[ground] * dir_x[ground]
        gy = oy + t[ground] * dir_y[ground]
        labels[ground] = label_grid(scenario, gx, gy)
    return SegmentationImage(labels)


def project_points_local(points, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Project vehicle-frame ground points to continuous (u, v) image coords.

    Returns (uv, visible); uv rows are meaningful only where visible is True.
    A point is visible when it lies in front of the camera and inside the
    image bounds [0, width) x [0, height).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rel = np.column_stack(
        (
            pts[:, 0] - cam.forward_offset,
            pts[:, 1],
            np.full(pts.shape[0], -cam.mount_height),
        )
    )
    q = rel @ _camera_rotation(cam)  # camera-frame coordinates (R^T applied per row)
    qz = q[:, 2]
    front = qz > 1e-12
    qz_safe = np.where(front, qz, 1.0)
    u = cam.cx + cam.focal * q[:, 0] / qz_safe
    v = cam.cy + cam.focal * q[:, 1] / qz_safe
    visible = front & (u >= 0.0) & (u < cam.width) & (v >= 0.0) & (v < cam.height)
    return np.column_stack((u, v)), visible


def project_trajectory(traj: Trajectory, cam: CameraModel) -> list[tuple[float, float] | None]:
    """Per-point projection of a vehicle-frame trajectory; None where invisible."""
    uv, visible = project_points_local(traj.points, cam)
    return [
        (float(uv[i, 0]), float(uv[i, 1])) if visible[i] else None
        for i in range(len(traj))
    ]


def pixel_for_uv(uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map continuous (u, v) to integer (row, col) raster indices."""
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    cols = np.floor(uv[:, 0]).astype(np.int64)
    rows = np.floor(uv[:, 1]).astype(np.int64)
    return rows, cols


def ground_point_for_pixel(cam: CameraModel, u: float, v: float) -> tuple[float, float] | None:
    """Cast the ray through continuous (u, v) onto the ground, in the vehicle frame.

    Returns None for rays at or above the horizon.
    """
    rot = _camera_rotation(cam)
    d_cam = np.array([(u - cam.cx) / cam.focal, (v - cam.cy) / cam.focal, 1.0])
    d = rot @ d_cam
    if d[2] >= 0.0:
        return None
    t = -cam.mount_height / d[2]
    return (cam.forward_offset + t * d[0], t * d[1])


def horizon_v(cam: CameraModel) -> float:
    """Continuous v of the ground-plane horizon: cy - f * tan(pitch_down)."""
    return cam.cy - cam.focal * math.tan(cam.pitch_down)


def save_grayscale(image: SegmentationImage, path) -> None:
    """Write raw label codes as an 8-bit grayscale image."""
    from PIL import Image

    Image.fromarray(image.labels, mode="L").save(path)


def save_colormapped(image: SegmentationImage, path) -> None:
    """Write a color-mapped render using the terrain legend."""
    from PIL import Image

    palette = np.zeros((256, 3), dtype=np.uint8)
    for label, color in LABEL_COLORS.items():
        palette[int(label)] = color
    rgb = palette[image.labels]
    Image.fromarray(rgb, mode="RGB").save(path)
