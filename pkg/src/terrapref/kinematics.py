"""Differential-drive kinematics: poses, control bins, fixed-horizon rollouts."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Pose",
    "ControlCommand",
    "ControlSet",
    "Trajectory",
    "PreferenceSet",
    "wrap_angle",
    "make_control_set",
    "rollout",
    "build_preference_set",
    "to_local_frame",
    "to_world_frame",
]


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(theta, math.tau)
    if wrapped <= -math.pi:
        wrapped += math.tau
    return wrapped


@dataclass(frozen=True)
class Pose:
    """Planar pose (x, y, theta); theta is kept in (-pi, pi], +theta turns left."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class ControlCommand:
    """Velocity command: v in m/s (forward only), w in rad/s (+w turns left)."""

    v: float
    w: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.v) and math.isfinite(self.w)):
            raise ValueError("control command components must be finite")
        if self.v < 0.0:
            raise ValueError(f"linear velocity must be non-negative, got {self.v}")


@dataclass(frozen=True)
class ControlSet:
    """Indexed command bins; bin i generates trajectory i of the preference set."""

    commands: tuple[ControlCommand, ...]

    def __post_init__(self) -> None:
        if len(self.commands) < 2:
            raise ValueError("control set needs at least two commands")
        if len({c.v for c in self.commands}) != 1:
            raise ValueError("control set must share one linear velocity")
        ws = [c.w for c in self.commands]
        if not all(b > a for a, b in zip(ws, ws[1:])):
            raise ValueError("angular velocity bins must be strictly increasing")

    def __len__(self) -> int:
        return len(self.commands)

    def __getitem__(self, i: int) -> ControlCommand:
        return self.commands[i]

    @property
    def v(self) -> float:
        return self.commands[0].v

    @property
    def w_values(self) -> np.ndarray:
        return np.array([c.w for c in self.commands])


def make_control_set(
    m: int = 21, w_min: float = -1.0, w_max: float = 1.0, v: float = 1.0
) -> ControlSet:
    """Build m bins with w evenly spaced over [w_min, w_max].

    The affine two-point form keeps symmetric ranges exactly antisymmetric
    (bin m-1-i holds bitwise -w of bin i) and odd m hits w = 0 exactly.
    """
    if m < 2:
        raise ValueError(f"need at least two command bins, got m={m}")
    if not w_min < w_max:
        raise ValueError(f"w_min must be below w_max, got [{w_min}, {w_max}]")
    if v <= 0.0:
        raise ValueError(f"shared linear velocity must be positive, got {v}")
    denom = m - 1
    ws = [(w_min * (denom - i) + w_max * i) / denom for i in range(m)]
    return ControlSet(tuple(ControlCommand(v, w) for w in ws))


@dataclass(frozen=True)
class Trajectory:
    """Fixed-horizon pose sequence; row t holds (x, y, theta) after step t+1.

    The start pose is not stored.
    """

    poses: np.ndarray  # (n, 3) float64, read-only
    index: int | None = None  # position in the generating control set

    def __post_init__(self) -> None:
        poses = np.array(self.poses, dtype=float)
        if poses.ndim != 2 or poses.shape[1] != 3 or poses.shape[0] < 1:
            raise ValueError("trajectory needs an (n, 3) pose array with n >= 1")
        poses.flags.writeable = False
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return int(self.poses.shape[0])

    @property
    def points(self) -> np.ndarray:
        return self.poses[:, :2]

    @property
    def final_pose(self) -> Pose:
        x, y, theta = self.poses[-1]
        return Pose(x, y, theta)


def rollout(
    start: Pose, cmd: ControlCommand, dt: float, n: int, index: int | None = None
) -> Trajectory:
    """Forward-simulate the unicycle model for n steps of dt seconds.

    Per step the position advances along the previous heading, then the
    heading turns by w*dt.
    """
    if not (math.isfinite(dt) and dt > 0.0):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    if int(n) != n or n < 1:
        raise ValueError(f"horizon must be a positive integer, got {n}")
    x, y, theta = start.x, start.y, start.theta
    arc = cmd.v * dt
    turn = cmd.w * dt
    out = np.empty((int(n), 3))
    for t in range(int(n)):
        x += arc * math.cos(theta)
        y += arc * math.sin(theta)
        theta = wrap_angle(theta + turn)
        out[t, 0] = x
        out[t, 1] = y
        out[t, 2] = theta
    return Trajectory(out, index)


@dataclass(frozen=True)
class PreferenceSet:
    """The m candidate trajectories rolled out from the origin, one per bin."""

    trajectories: tuple[Trajectory, ...]
    control_set: ControlSet
    dt: float
    horizon: int

    def __post_init__(self) -> None:
        if len(self.trajectories) != len(self.control_set):
            raise ValueError("need exactly one trajectory per control command")
        if any(len(t) != self.horizon for t in self.trajectories):
            raise ValueError("trajectories must all share the horizon length")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def m(self) -> int:
        return len(self.trajectories)

    @property
    def final_points(self) -> np.ndarray:
        return np.array([t.poses[-1, :2] for t in self.trajectories])


def build_preference_set(
    m: int = 21,
    w_min: float = -1.0,
    w_max: float = 1.0,
    v: float = 1.0,
    dt: float = 0.1,
    n: int = 30,
) -> PreferenceSet:
    """Roll the whole control set out from the origin pose (0, 0, 0)."""
    control_set = make_control_set(m=m, w_min=w_min, w_max=w_max, v=v)
    origin = Pose(0.0, 0.0, 0.0)
    trajectories = tuple(
        rollout(origin, cmd, dt, n, index=i)
        for i, cmd in enumerate(control_set.commands)
    )
    if n >= 2:
        finals = {tuple(t.poses[-1]) for t in trajectories}
        if len(finals) != m:
            raise ValueError("control bins did not produce distinct final poses")
    return PreferenceSet(trajectories, control_set, float(dt), int(n))


def to_local_frame(points, vehicle: Pose) -> np.ndarray:
    """Express world (x, y) points in the vehicle frame (origin at vehicle, +x ahead)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c, s = math.cos(vehicle.theta), math.sin(vehicle.theta)
    dx = pts[:, 0] - vehicle.x
    dy = pts[:, 1] - vehicle.y
    return np.column_stack((c * dx + s * dy, -s * dx + c * dy))


def to_world_frame(points, vehicle: Pose) -> np.ndarray:
    """Inverse of to_local_frame."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c, s = math.cos(vehicle.theta), math.sin(vehicle.theta)
    x = vehicle.x + c * pts[:, 0] - s * pts[:, 1]
    y = vehicle.y + s * pts[:, 0] + c * pts[:, 1]
    return np.column_stack((x, y))
