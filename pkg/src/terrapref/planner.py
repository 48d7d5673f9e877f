"""Closed-loop planning: per-tick bin choice, episode execution, logging, replay."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraModel, SegmentationImage, render_segmentation, save_colormapped
from .kinematics import ControlCommand, Pose, PreferenceSet, rollout
from .learner import Classifier, Prediction
from .utility import (
    PROGRESS_WINDOW,
    ProjectedPreferenceSet,
    TickFeatures,
    UtilityFeature,
    compute_tick_features,
)
from .world import ReferencePath, Scenario, TerrainLabel, label_at, path_distance

__all__ = [
    "PlannerState",
    "PlanResult",
    "make_planner_state",
    "plan_tick",
    "PlanTickRecord",
    "EpisodeSummary",
    "EpisodeLog",
    "run_episode",
    "save_episode_log",
    "load_episode_log",
    "replay_episode",
    "EpisodeLogFormatError",
    "STOP_COMMAND",
]

EPISODE_FORMAT = 1
EPISODE_KIND = "terrapref-episode-log"

STOP_COMMAND = ControlCommand(0.0, 0.0)


class EpisodeLogFormatError(ValueError):
    """An episode log file is malformed, truncated, or the wrong version."""


@dataclass
class PlannerState:
    """Mutable per-episode planner state; everything else is immutable."""

    model: Classifier
    prefset: PreferenceSet
    cam: CameraModel
    projected: ProjectedPreferenceSet
    progress_index: int = 0
    last_command: ControlCommand = STOP_COMMAND
    window: int = PROGRESS_WINDOW


def make_planner_state(
    model: Classifier,
    prefset: PreferenceSet,
    cam: CameraModel,
    window: int = PROGRESS_WINDOW,
) -> PlannerState:
    if model.m != prefset.m:
        raise ValueError(f"model has m={model.m}, preference set has m={prefset.m}")
    projected = ProjectedPreferenceSet.build(prefset, cam)
    return PlannerState(model=model, prefset=prefset, cam=cam, projected=projected, window=window)


@dataclass(frozen=True)
class PlanResult:
    command: ControlCommand
    command_index: int | None
    prediction: Prediction | None
    features: TickFeatures | None
    goal_reached: bool

    @property
    def utility(self) -> UtilityFeature | None:
        return self.features.utility if self.features is not None else None


def plan_tick(
    state: PlannerState,
    vehicle: Pose,
    seg: SegmentationImage,
    path: ReferencePath,
    goal_radius: float = 2.0,
) -> PlanResult:
    """Choose the next command bin from one segmentation frame.

    Within goal_radius of the final waypoint the planner reports goal-reached
    and commands a stop.
    """
    gx, gy = path.last
    if math.hypot(vehicle.x - gx, vehicle.y - gy) <= goal_radius:
        state.last_command = STOP_COMMAND
        return PlanResult(STOP_COMMAND, None, None, None, True)
    features = compute_tick_features(
        state.projected, vehicle, seg, path, state.progress_index, state.window
    )
    state.progress_index = features.progress_index
    prediction = state.model.forward(features.utility)
    command = state.prefset.control_set[prediction.argmax_index]
    state.last_command = command
    return PlanResult(command, prediction.argmax_index, prediction, features, False)


@dataclass(frozen=True)
class PlanTickRecord:
    """One perception tick of an episode, enough to replay the decision."""

    tick: int  # control tick index at which this plan ran
    time: float
    pose: Pose
    progress_index: int  # progress before this tick's update
    command_index: int
    command: tuple[float, float]
    probabilities: np.ndarray
    terrain: TerrainLabel
    utility: np.ndarray  # (m, 5)


@dataclass(frozen=True)
class EpisodeSummary:
    reason: str  # "goal" | "timeout" | "collision"
    sim_time: float
    control_ticks: int
    terrain_ticks: dict[int, int]  # 30 Hz contact counts per label code
    max_cross_track: float

    @property
    def goal_reached(self) -> bool:
        return self.reason == "goal"

    @property
    def dominant_terrain(self) -> TerrainLabel | None:
        """Most-contacted non-background terrain, or None if only background."""
        best: tuple[int, int] | None = None  # (count, code), ties -> lower code
        for code, count in self.terrain_ticks.items():
            if code == int(TerrainLabel.BACKGROUND) or count == 0:
                continue
            if best is None or count > best[0] or (count == best[0] and code < best[1]):
                best = (count, code)
        return TerrainLabel(best[1]) if best else None


@dataclass
class EpisodeLog:
    scenario_name: str
    m: int
    control_dt: float
    perception_every: int
    goal_radius: float
    records: list[PlanTickRecord] = field(default_factory=list)
    summary: EpisodeSummary | None = None
    truncated_at: int | None = None  # line of the first bad record when loaded tolerantly


def run_episode(
    scenario: Scenario,
    model: Classifier,
    prefset: PreferenceSet,
    cam: CameraModel,
    *,
    control_hz: int = 30,
    perception_every: int = 3,
    timeout_factor: float = 3.0,
    window: int = PROGRESS_WINDOW,
    dump_dir: str | Path | None = None,
) -> EpisodeLog:
    """Drive the scenario closed-loop: plan at the perception rate, hold the
    last command between plans, stop on goal, timeout, or non-traversable contact.
    """
    state = make_planner_state(model, prefset, cam, window)
    path = scenario.reference_path
    dt = 1.0 / control_hz
    timeout = timeout_factor * path.length / prefset.control_set.v
    log = EpisodeLog(
        scenario_name=scenario.name,
        m=prefset.m,
        control_dt=dt,
        perception_every=perception_every,
        goal_radius=scenario.goal_radius,
    )
    dump_to = Path(dump_dir) if dump_dir is not None else None
    if dump_to is not None:
        dump_to.mkdir(parents=True, exist_ok=True)

    pose = scenario.start_pose
    command = STOP_COMMAND
    terrain_ticks: dict[int, int] = {int(label): 0 for label in TerrainLabel}
    max_cross_track = 0.0
    tick = 0
    reason = "timeout"
    while True:
        now = tick * dt
        if now > timeout:
            reason = "timeout"
            break
        terrain = label_at(scenario, pose.xy)
        terrain_ticks[int(terrain)] += 1
        if terrain == TerrainLabel.NON_TRAVERSABLE:
            reason = "collision"
            break
        lo = max(0, state.progress_index - 1)
        hi = min(len(path), state.progress_index + window)
        max_cross_track = max(max_cross_track, path_distance(path, pose.xy, (lo, hi)))
        if tick % perception_every == 0:
            progress_before = state.progress_index
            seg = render_segmentation(scenario, pose, cam)
            if dump_to is not None:
                save_colormapped(seg, dump_to / f"{scenario.name}_{tick:06d}.png")
            result = plan_tick(state, pose, seg, path, scenario.goal_radius)
            if result.goal_reached:
                reason = "goal"
                break
            command = result.command
            log.records.append(
                PlanTickRecord(
                    tick=tick,
                    time=now,
                    pose=pose,
                    progress_index=progress_before,
                    command_index=result.command_index,
                    command=(command.v, command.w),
                    probabilities=result.prediction.probabilities,
                    terrain=terrain,
                    utility=result.features.utility.values,
                )
            )
        x, y, theta = rollout(pose, command, dt, 1).poses[0]
        pose = Pose(x, y, theta)
        tick += 1

    log.summary = EpisodeSummary(
        reason=reason,
        sim_time=tick * dt,
        control_ticks=tick,
        terrain_ticks=terrain_ticks,
        max_cross_track=max_cross_track,
    )
    return log


def replay_episode(
    log: EpisodeLog,
    scenario: Scenario,
    model: Classifier,
    prefset: PreferenceSet,
    cam: CameraModel,
    window: int = PROGRESS_WINDOW,
) -> list[PlanResult]:
    """Re-run plan_tick over the logged poses; pure function of the log inputs."""
    state = make_planner_state(model, prefset, cam, window)
    results = []
    for record in log.records:
        state.progress_index = record.progress_index
        seg = render_segmentation(scenario, record.pose, cam)
        results.append(plan_tick(state, record.pose, seg, scenario.reference_path, log.goal_radius))
    return results


def save_episode_log(log: EpisodeLog, path: str | Path) -> None:
    header = {
        "format": EPISODE_FORMAT,
        "kind": EPISODE_KIND,
        "scenario": log.scenario_name,
        "m": log.m,
        "control_dt": log.control_dt,
        "perception_every": log.perception_every,
        "goal_radius": log.goal_radius,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for r in log.records:
            fh.write(
                json.dumps(
                    {
                        "tick": r.tick,
                        "time": r.time,
                        "pose": [r.pose.x, r.pose.y, r.pose.theta],
                        "progress_index": r.progress_index,
                        "command_index": r.command_index,
                        "command": list(r.command),
                        "probabilities": r.probabilities.tolist(),
                        "terrain": int(r.terrain),
                        "utility": r.utility.tolist(),
                    }
                )
                + "\n"
            )
        if log.summary is not None:
            fh.write(
                json.dumps(
                    {
                        "summary": {
                            "reason": log.summary.reason,
                            "sim_time": log.summary.sim_time,
                            "control_ticks": log.summary.control_ticks,
                            "terrain_ticks": {
                                str(k): v for k, v in log.summary.terrain_ticks.items()
                            },
                            "max_cross_track": log.summary.max_cross_track,
                        }
                    }
                )
                + "\n"
            )


def load_episode_log(path: str | Path, *, truncated_ok: bool = False) -> EpisodeLog:
    """Read a saved episode log.

    A bad record line raises, unless truncated_ok is set, in which case
    parsing stops there, the prefix is kept, and truncated_at reports the
    offending line. A bad header is always an error.
    """
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise EpisodeLogFormatError("episode log file is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise EpisodeLogFormatError(f"episode header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict) or header.get("kind") != EPISODE_KIND:
        raise EpisodeLogFormatError("not an episode log file")
    if header.get("format") != EPISODE_FORMAT:
        raise EpisodeLogFormatError(f"unsupported episode format {header.get('format')!r}")
    log = EpisodeLog(
        scenario_name=str(header.get("scenario", "")),
        m=int(header["m"]),
        control_dt=float(header["control_dt"]),
        perception_every=int(header["perception_every"]),
        goal_radius=float(header.get("goal_radius", 2.0)),
    )
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            if "summary" in doc:
                s = doc["summary"]
                log.summary = EpisodeSummary(
                    reason=str(s["reason"]),
                    sim_time=float(s["sim_time"]),
                    control_ticks=int(s["control_ticks"]),
                    terrain_ticks={int(k): int(v) for k, v in s["terrain_ticks"].items()},
                    max_cross_track=float(s["max_cross_track"]),
                )
                continue
            x, y, theta = doc["pose"]
            log.records.append(
                PlanTickRecord(
                    tick=int(doc["tick"]),
                    time=float(doc["time"]),
                    pose=Pose(x, y, theta),
                    progress_index=int(doc["progress_index"]),
                    command_index=int(doc["command_index"]),
                    command=(float(doc["command"][0]), float(doc["command"][1])),
                    probabilities=np.asarray(doc["probabilities"], dtype=float),
                    terrain=TerrainLabel(int(doc["terrain"])),
                    utility=np.asarray(doc["utility"], dtype=float),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            if truncated_ok:
                log.truncated_at = lineno
                break
            raise EpisodeLogFormatError(f"bad episode record on line {lineno}: {exc}") from exc
    return log
