"""Terrain-preference learning for a simulated differential-drive vehicle.

The package simulates a small vehicle with a forward segmentation camera,
records terrain/path utility features while a demonstrator drives, trains a
preference classifier on those recordings, and then uses the classifier to
steer along a reference path while choosing terrain the way the demonstrator
did.
"""

from .camera import CameraModel, SegmentationImage, render_segmentation
from .kinematics import (
    ControlCommand,
    ControlSet,
    Pose,
    PreferenceSet,
    Trajectory,
    build_preference_set,
    make_control_set,
    rollout,
)
from .learner import (
    Classifier,
    Dataset,
    DemoRecord,
    TrainConfig,
    TrainResult,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
    train,
)
from .planner import EpisodeLog, plan_tick, run_episode
from .sim import collect_course, record_demonstration, scripted_oracle
from .utility import UtilityFeature, build_utility_feature
from .world import Scenario, TerrainLabel, load_scenario, save_scenario

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "SegmentationImage",
    "render_segmentation",
    "ControlCommand",
    "ControlSet",
    "Pose",
    "PreferenceSet",
    "Trajectory",
    "build_preference_set",
    "make_control_set",
    "rollout",
    "Classifier",
    "Dataset",
    "DemoRecord",
    "TrainConfig",
    "TrainResult",
    "load_dataset",
    "load_model",
    "save_dataset",
    "save_model",
    "train",
    "EpisodeLog",
    "plan_tick",
    "run_episode",
    "collect_course",
    "record_demonstration",
    "scripted_oracle",
    "UtilityFeature",
    "build_utility_feature",
    "Scenario",
    "TerrainLabel",
    "load_scenario",
    "save_scenario",
    "__version__",
]
