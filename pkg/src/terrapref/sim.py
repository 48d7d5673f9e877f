"""Fixed-step simulation: 30 Hz control, 10 Hz perception, demonstration recording."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .camera import CameraModel, render_segmentation
from .kinematics import ControlCommand, Pose, PreferenceSet, rollout
from .learner import Dataset, DemoRecord, Prediction
from .utility import PROGRESS_WINDOW, ProjectedPreferenceSet, UtilityFeature, compute_tick_features
from .world import Scenario, TerrainLabel, label_at

__all__ = [
    "SimClock",
    "step",
    "TickContext",
    "Demonstrator",
    "DEFAULT_ORACLE_WEIGHTS",
    "make_scripted_oracle",
    "scripted_oracle",
    "OraclePolicy",
    "RecordingError",
    "record_demonstration",
    "collect_course",
]


@dataclass
class SimClock:
    """Control-tick counter; a perception tick fires every perception_every ticks."""

    control_hz: int = 30
    perception_every: int = 3
    tick: int = 0

    def __post_init__(self) -> None:
        if self.control_hz < 1 or self.perception_every < 1:
            raise ValueError("clock rates must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.control_hz

    @property
    def time(self) -> float:
        return self.tick * self.dt

    @property
    def is_perception_tick(self) -> bool:
        return self.tick % self.perception_every == 0

    def advance(self) -> None:
        self.tick += 1


def step(pose: Pose, cmd: ControlCommand, dt: float) -> Pose:
    """One control-period update; same recurrence as kinematics.rollout."""
    x, y, theta = rollout(pose, cmd, dt, 1).poses[0]
    return Pose(x, y, theta)


@dataclass(frozen=True)
class TickContext:
    """Everything a demonstrator may look at when choosing a bin."""

    utility: UtilityFeature
    prefset: PreferenceSet
    vehicle: Pose
    path_window_local: np.ndarray
    progress_index: int
    nearest_distance: float
    time: float


Demonstrator = Callable[[TickContext], int]

# Terrain crossing penalties (non_traversable, water, rock, mud): strictly
# decreasing so less hazardous terrain is always cheaper.
DEFAULT_ORACLE_WEIGHTS = (8.0, 4.0, 2.0, 1.0)


def make_scripted_oracle(weights=DEFAULT_ORACLE_WEIGHTS) -> Demonstrator:
    """Deterministic stand-in driver: argmax of closeness minus weighted coverage."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (4,) or np.any(w <= 0.0) or not np.all(np.diff(w) < 0.0):
        raise ValueError("oracle weights must be four strictly decreasing positives")

    def oracle(ctx: TickContext) -> int:
        u = ctx.utility.values
        scores = u[:, 4] - u[:, :4] @ w
        return int(np.argmax(scores))  # ties resolve to the lowest index

    return oracle


scripted_oracle: Demonstrator = make_scripted_oracle()


@dataclass(frozen=True)
class OraclePolicy:
    """Classifier-shaped wrapper over the scripted scores (one-hot output).

    Lets the closed-loop planner drive with the scripted rule, which gives a
    behavior baseline to compare learned models against.
    """

    m: int
    weights: tuple[float, ...] = DEFAULT_ORACLE_WEIGHTS

    def forward(self, feature) -> Prediction:
        u = feature.values
        if u.shape[0] != self.m:
            raise ValueError(f"feature has m={u.shape[0]}, policy expects {self.m}")
        scores = u[:, 4] - u[:, :4] @ np.asarray(self.weights, dtype=float)
        best = int(np.argmax(scores))
        probs = np.zeros(self.m)
        probs[best] = 1.0
        return Prediction(probabilities=probs, argmax_index=best)


class RecordingError(RuntimeError):
    """A demonstrator returned an unusable bin index."""


def record_demonstration(
    scenario: Scenario,
    demonstrator: Demonstrator,
    *,
    prefset: PreferenceSet,
    cam: CameraModel,
    duration: float | None = None,
    start: Pose | None = None,
    control_hz: int = 30,
    perception_every: int = 3,
    timeout_factor: float = 3.0,
    window: int = PROGRESS_WINDOW,
) -> Dataset:
    """Drive one scenario leg with the demonstrator's bin choices and record it.

    One DemoRecord per perception tick. The leg ends at the duration limit if
    given, otherwise at the goal, at timeout, or on non-traversable contact.
    The utility matrix is built by the same compute_tick_features call the
    planner uses. `start` overrides the scenario's start pose, letting a
    course run the same leg from several approaches.
    """
    clock = SimClock(control_hz=control_hz, perception_every=perception_every)
    projected = ProjectedPreferenceSet.build(prefset, cam)
    path = scenario.reference_path
    timeout = timeout_factor * path.length / prefset.control_set.v
    pose = scenario.start_pose if start is None else start
    command = ControlCommand(0.0, 0.0)
    progress = 0
    records: list[DemoRecord] = []
    reason = "duration"
    goal_x, goal_y = path.last
    while True:
        if duration is not None and clock.time >= duration:
            reason = "duration"
            break
        if duration is None and clock.time > timeout:
            reason = "timeout"
            break
        if label_at(scenario, pose.xy) == TerrainLabel.NON_TRAVERSABLE:
            reason = "collision"
            break
        if clock.is_perception_tick:
            dx = pose.x - goal_x
            dy = pose.y - goal_y
            if duration is None and dx * dx + dy * dy <= scenario.goal_radius**2:
                reason = "goal"
                break
            seg = render_segmentation(scenario, pose, cam)
            features = compute_tick_features(projected, pose, seg, path, progress, window)
            progress = features.progress_index
            ctx = TickContext(
                utility=features.utility,
                prefset=prefset,
                vehicle=pose,
                path_window_local=features.path_window_local,
                progress_index=progress,
                nearest_distance=features.nearest_distance,
                time=clock.time,
            )
            label = demonstrator(ctx)
            if not isinstance(label, (int, np.integer)) or not 0 <= label < prefset.m:
                raise RecordingError(f"demonstrator returned bad bin {label!r} (m={prefset.m})")
            command = prefset.control_set[int(label)]
            records.append(
                DemoRecord(
                    utility_feature=features.utility.values,
                    label_index=int(label),
                    timestamp=clock.time,
                    vehicle_pose=pose,
                )
            )
        pose = step(pose, command, clock.dt)
        clock.advance()

    metadata = {
        "scenario": scenario.name,
        "end_reason": reason,
        "start": (start if start is not None else scenario.start_pose).as_array().tolist(),
        "control_hz": control_hz,
        "perception_every": perception_every,
        "records": len(records),
        "m": prefset.m,
        "dt": prefset.dt,
        "horizon": prefset.horizon,
    }
    return Dataset(records=records, metadata=metadata)


def collect_course(
    course: list,
    demonstrator: Demonstrator,
    *,
    prefset: PreferenceSet,
    cam: CameraModel,
    window: int = PROGRESS_WINDOW,
) -> Dataset:
    """Record one leg per course entry and concatenate into a single dataset.

    An entry is a Scenario, a (scenario, start pose) pair, or anything with
    scenario/start/duration attributes such as scenarios.CourseLeg.
    """
    legs = []
    for entry in course:
        if isinstance(entry, Scenario):
            scenario, start, duration = entry, None, None
        elif isinstance(entry, tuple):
            (scenario, start), duration = entry, None
        else:
            scenario, start, duration = entry.scenario, entry.start, entry.duration
        legs.append(
            record_demonstration(
                scenario, demonstrator, prefset=prefset, cam=cam, window=window,
                start=start, duration=duration,
            )
        )
    metadata = {
        "course": [leg.metadata for leg in legs],
        "m": prefset.m,
        "dt": prefset.dt,
        "horizon": prefset.horizon,
    }
    merged = Dataset(metadata=metadata)
    for leg in legs:
        for record in leg.records:
            merged.append(record)
    return merged
