"""Utility features: per-trajectory terrain coverage plus relative path closeness.

Feature matrix rows follow the preference-set order; columns are the four
terrain coverage fractions (non_traversable, water, rock, mud) and one relative
path-closeness score. All entries live in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraModel, SegmentationImage, pixel_for_uv, project_points_local
from .kinematics import Pose, PreferenceSet, Trajectory, to_local_frame
from .world import ReferencePath, nearest_waypoint_distance

__all__ = [
    "UTILITY_COLUMNS",
    "UtilityFeature",
    "terrain_utilities",
    "distance_utility",
    "build_utility_feature",
    "ProjectedPreferenceSet",
    "TickFeatures",
    "compute_tick_features",
    "PROGRESS_WINDOW",
]

UTILITY_COLUMNS = ("non_traversable", "water", "rock", "mud", "path_closeness")

# Forward waypoint window used for progress tracking and the closeness column.
PROGRESS_WINDOW = 50


@dataclass(frozen=True)
class UtilityFeature:
    """(m, 5) feature matrix; row i describes preference-set trajectory i."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(UTILITY_COLUMNS) or values.shape[0] < 1:
            raise ValueError("utility feature must be an (m, 5) matrix")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return int(self.values.shape[0])


def _tally_labels(seg: SegmentationImage, uv: np.ndarray, visible: np.ndarray) -> np.ndarray:
    """Count terrain codes under the visible projected points (length-5 counts)."""
    if not visible.any():
        return np.zeros(5, dtype=np.int64)
    rows, cols = pixel_for_uv(uv[visible])
    return np.bincount(seg.labels[rows, cols], minlength=5)[:5]


def terrain_utilities(
    traj: Trajectory, seg: SegmentationImage, cam: CameraModel
) -> tuple[float, float, float, float]:
    """Fraction of trajectory points imaging each terrain class.

    Points behind the camera or outside the image contribute to no class;
    the denominator is always the trajectory length n.
    """
    uv, visible = project_points_local(traj.points, cam)
    counts = _tally_labels(seg, uv, visible)
    n = len(traj)
    return (counts[1] / n, counts[2] / n, counts[3] / n, counts[4] / n)


def distance_utility(prefset: PreferenceSet, path_local: np.ndarray) -> np.ndarray:
    """Min-max normalized closeness of each trajectory's final pose to the path.

    The nearest trajectory scores 1, the farthest 0; if all are equidistant
    every trajectory scores 1. path_local is an (k, 2) array of windowed
    waypoints already expressed in the vehicle frame.
    """
    wp = np.atleast_2d(np.asarray(path_local, dtype=float))
    if wp.size == 0:
        raise ValueError("distance utility needs at least one waypoint")
    finals = prefset.final_points  # (m, 2)
    diff = finals[:, None, :] - wp[None, :, :]
    d = np.sqrt(np.einsum("mkj,mkj->mk", diff, diff)).min(axis=1)
    d_min = d.min()
    d_max = d.max()
    if d_max == d_min:
        return np.ones(len(prefset))
    return 1.0 - (d - d_min) / (d_max - d_min)


@dataclass(frozen=True)
class ProjectedPreferenceSet:
    """Cached pixel lookups for the preference set under a fixed camera.

    The preference set lives in the vehicle frame and the camera is rigidly
    mounted, so the projection never changes between ticks.
    """

    prefset: PreferenceSet
    cam: CameraModel
    uv: np.ndarray  # (m, n, 2) continuous image coords
    visible: np.ndarray  # (m, n) bool

    @classmethod
    def build(cls, prefset: PreferenceSet, cam: CameraModel) -> "ProjectedPreferenceSet":
        uv = np.empty((prefset.m, prefset.horizon, 2))
        visible = np.empty((prefset.m, prefset.horizon), dtype=bool)
        for i, traj in enumerate(prefset.trajectories):
            uv[i], visible[i] = project_points_local(traj.points, cam)
        uv.flags.writeable = False
        visible.flags.writeable = False
        return cls(prefset, cam, uv, visible)

    def terrain_matrix(self, seg: SegmentationImage) -> np.ndarray:
        """(m, 4) terrain coverage fractions for a fresh segmentation image."""
        n = self.prefset.horizon
        out = np.empty((self.prefset.m, 4))
        for i in range(self.prefset.m):
            counts = _tally_labels(seg, self.uv[i], self.visible[i])
            out[i, 0] = counts[1] / n
            out[i, 1] = counts[2] / n
            out[i, 2] = counts[3] / n
            out[i, 3] = counts[4] / n
        return out


def _assemble(
    projected: ProjectedPreferenceSet, seg: SegmentationImage, path_local: np.ndarray
) -> UtilityFeature:
    values = np.empty((projected.prefset.m, len(UTILITY_COLUMNS)))
    values[:, :4] = projected.terrain_matrix(seg)
    values[:, 4] = distance_utility(projected.prefset, path_local)
    return UtilityFeature(values)


def build_utility_feature(
    prefset: PreferenceSet,
    seg: SegmentationImage,
    cam: CameraModel,
    path_local: np.ndarray,
) -> UtilityFeature:
    """Assemble the full (m, 5) utility matrix for one perception tick."""
    return _assemble(ProjectedPreferenceSet.build(prefset, cam), seg, path_local)


@dataclass(frozen=True)
class TickFeatures:
    """Per-perception-tick feature bundle shared by recorder and planner."""

    utility: UtilityFeature
    progress_index: int
    nearest_distance: float
    path_window_local: np.ndarray


def compute_tick_features(
    projected: ProjectedPreferenceSet,
    vehicle: Pose,
    seg: SegmentationImage,
    path: ReferencePath,
    progress_index: int,
    window: int = PROGRESS_WINDOW,
) -> TickFeatures:
    """Advance path progress monotonically and build the utility matrix.

    Progress moves to the nearest waypoint inside the forward window starting
    at the current progress index; it never moves backward.
    """
    stop = min(progress_index + window, len(path))
    dist, found = nearest_waypoint_distance(path, vehicle.xy, (progress_index, stop))
    progress = max(progress_index, found)
    window_world = path.waypoints[progress : min(progress + window, len(path))]
    path_local = to_local_frame(window_world, vehicle)
    utility = _assemble(projected, seg, path_local)
    return TickFeatures(utility, progress, dist, path_local)
