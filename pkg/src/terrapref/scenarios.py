"""Bundled worlds: a demonstration course plus held-out evaluation layouts.

Every layout shares the same recipe: a straight 30 m reference line with
terrain placed around the midpoint, so the episode starts and ends on
background and the interesting decision happens in full view of the camera.

Geometry notes that matter:

* Lone patches are elongated hexagons offset from the line: long edges
  parallel to travel and gently sloped ends. The vehicle skirts a patch at
  whatever margin the discrete trajectory fan leaves, and the camera cannot
  see the ground closer than ~0.43 m, so circular shoulders and square
  corners get clipped blind; a long straight edge keeps any too-tight
  trajectory visibly dirty far ahead, which is what actually buys margin.
  The lateral offset keeps the dodge cheap in path closeness; a patch dead
  on the line would make every clearing arc score poorly and the
  demonstrator would plow through.
* Paired terrains come as a wall with a gate, or as two side-by-side bands
  where the straight line lands on the worse band. Both force an actual
  steering decision instead of rewarding blind line following.
* Any band the vehicle is supposed to cross starts within ~0.45 m of the
  line. The 3 s rollouts only reach ~0.9 m laterally, so a preferred band
  placed farther out leaves no reachable clean choice and the planner spins
  in place instead of committing.
* Paint order is last-wins, so gates and preferred bands are painted after
  the wall they punch through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import Pose
from .world import (
    ConvexPolygon,
    Rect,
    ReferencePath,
    Scenario,
    TerrainLabel,
    TerrainPatch,
)

__all__ = [
    "straight_path",
    "empty_scenario",
    "training_scenarios",
    "test_scenarios",
    "holdout_scenario",
    "scenario_by_name",
    "all_scenarios",
]

COURSE_LENGTH = 30.0
WAYPOINT_SPACING = 0.5
GOAL_RADIUS = 1.0

# Walls span the corridor this far to each side; wide enough that orbiting
# around an end never beats using the gate.
WALL_HALF_WIDTH = 3.5


def straight_path(
    length: float = COURSE_LENGTH, spacing: float = WAYPOINT_SPACING
) -> ReferencePath:
    """Waypoints along +x from the origin, spacing apart, endpoint included."""
    count = int(round(length / spacing)) + 1
    xs = np.linspace(0.0, length, count)
    return ReferencePath(np.column_stack((xs, np.zeros(count))))


def _scenario(
    name: str,
    patches: list[TerrainPatch],
    expected: str | None,
) -> Scenario:
    return Scenario(
        name=name,
        patches=tuple(patches),
        reference_path=straight_path(),
        start_pose=Pose(0.0, 0.0, 0.0),
        goal_radius=GOAL_RADIUS,
        expected_preference=expected,
    )


def empty_scenario(name: str = "open-field") -> Scenario:
    """Background everywhere; useful for pure path-following checks."""
    return _scenario(name, [], None)


def _blob(
    center: tuple[float, float], half_length: float, half_edge: float, half_width: float
) -> ConvexPolygon:
    """Flat-edged hexagon: long edges parallel to x, sloped ends.

    half_edge is half the straight-edge length; the end chamfers run from
    (+-half_length, 0) to (+-half_edge, +-half_width) relative to center.
    """
    cx, cy = center
    return ConvexPolygon(
        np.array(
            [
                (cx + half_length, cy),
                (cx + half_edge, cy + half_width),
                (cx - half_edge, cy + half_width),
                (cx - half_length, cy),
                (cx - half_edge, cy - half_width),
                (cx + half_edge, cy - half_width),
            ]
        )
    )


def _lone(name: str, label: TerrainLabel, side: float) -> Scenario:
    """Two overlapping lobes, the farther one reaching closer to the line.

    The stagger makes edge-shaving expensive: a trajectory grazing the
    dodge-side boundary picks up points on both lobes at once, so the swerve
    has to commit early instead of waiting for the single far corner.
    """
    if label == TerrainLabel.NON_TRAVERSABLE:
        # One lobe only: the barrier is never brushed, so the second step of
        # the stagger would just be another corner to meet mid-level-out.
        lobes = [_blob((15.0, 0.35 * side), 2.4, 0.75, 0.9)]
    else:
        lobes = [
            _blob((13.9, 0.50 * side), 1.6, 0.6, 0.8),
            _blob((15.8, 0.30 * side), 1.6, 0.6, 0.8),
        ]
    return _scenario(name, [TerrainPatch(label, lobe) for lobe in lobes], "avoid")


def _wall(label: TerrainLabel, x0: float, depth: float) -> TerrainPatch:
    return TerrainPatch(
        label, Rect((x0, -WALL_HALF_WIDTH), (x0 + depth, WALL_HALF_WIDTH))
    )


def _gate(
    name: str,
    wall_label: TerrainLabel,
    gate_label: TerrainLabel,
    *,
    x0: float = 15.0,
    depth: float = 1.0,
    half_width: float = 0.3,
    center: float = 0.0,
) -> Scenario:
    """Wall across the route with a preferred-terrain opening.

    An off-center gate makes the demonstrator visibly steer into the opening
    instead of riding the line through it; barrier walls keep center=0 so the
    crossing never flirts with the hard edges.
    """
    gate = TerrainPatch(
        gate_label, Rect((x0, center - half_width), (x0 + depth, center + half_width))
    )
    return _scenario(name, [_wall(wall_label, x0, depth), gate], gate_label.key)


def _side_by_side(
    name: str,
    base_label: TerrainLabel,
    preferred_label: TerrainLabel,
    *,
    x0: float = 15.0,
    depth: float = 1.0,
    edge: float = 0.1,
) -> Scenario:
    """Full-width base band with the preferred band painted over one side.

    edge is the signed y where the preferred band begins, placed close to the
    line so the straight-ahead trajectory lands on the base terrain but a
    small deviation reaches the preferred one.
    """
    if edge >= 0.0:
        preferred = Rect((x0, edge), (x0 + depth, WALL_HALF_WIDTH))
    else:
        preferred = Rect((x0, -WALL_HALF_WIDTH), (x0 + depth, edge))
    patches = [_wall(base_label, x0, depth), TerrainPatch(preferred_label, preferred)]
    return _scenario(name, patches, preferred_label.key)


def training_scenarios() -> list[Scenario]:
    """The ten-leg demonstration course.

    Four lone patches teach per-terrain dodging (the switch distance where
    the demonstrator gives up avoiding encodes how bad each terrain is), and
    six paired layouts teach which of two terrains to cross when crossing is
    unavoidable. Together they pin the full preference ordering.
    """
    return [
        _lone("lone-water", TerrainLabel.WATER, +1.0),
        _lone("lone-rock", TerrainLabel.ROCK, -1.0),
        _lone("lone-mud", TerrainLabel.MUD, +1.0),
        _lone("lone-barrier", TerrainLabel.NON_TRAVERSABLE, -1.0),
        _gate(
            "gate-mud-in-rock",
            TerrainLabel.ROCK,
            TerrainLabel.MUD,
            depth=1.0,
            center=+0.35,
        ),
        _gate(
            "gate-rock-in-water",
            TerrainLabel.WATER,
            TerrainLabel.ROCK,
            depth=0.5,
            center=-0.35,
        ),
        _gate(
            "gate-water-in-barrier",
            TerrainLabel.NON_TRAVERSABLE,
            TerrainLabel.WATER,
            depth=0.5,
        ),
        _gate(
            "gate-water-in-barrier-wide",
            TerrainLabel.NON_TRAVERSABLE,
            TerrainLabel.WATER,
            x0=14.5,
            depth=0.5,
            half_width=0.45,
        ),
        _side_by_side(
            "side-rock-over-water", TerrainLabel.WATER, TerrainLabel.ROCK, edge=+0.1
        ),
        _side_by_side(
            "side-mud-over-rock", TerrainLabel.ROCK, TerrainLabel.MUD, edge=-0.05
        ),
    ]


@dataclass(frozen=True)
class CourseLeg:
    scenario: Scenario
    start: Pose
    duration: float  # seconds; legs end shortly after the obstacle, not at the goal


def training_course() -> list[CourseLeg]:
    """Five passes over each training scenario from offset, angled starts.

    A demonstrator never approaches dead on the line, and the steering back
    toward it is half of what the recording should capture. Each pass starts
    off to one side with a heading error and runs just long enough to clear
    the obstacle and settle, so most recorded ticks are maneuvering rather
    than cruising. The lone-barrier passes all start on the dodge side: a
    start that puts the correction across the barrier face leaves no clean
    reachable bin by the time the face fills the view.

    Fifty-five legs at 9-12 s each is roughly nine and a half minutes of
    driving.
    """
    offsets = (
        (0.55, -0.12),
        (-0.55, 0.12),
        (0.30, 0.20),
        (-0.30, -0.20),
        (0.45, 0.0),
    )
    # Keep every barrier approach at y >= 0.3 with a level or climbing
    # heading: anything drifting down re-enters the blind spot over the
    # barrier's top edge with no reachable clean bin left. The barrier gets
    # double passes because hard-avoid contests are otherwise rare in the
    # course, and the fit underweights whatever it seldom sees contested.
    barrier_starts = (
        (0.55, -0.12),
        (0.30, 0.15),
        (0.45, 0.05),
        (0.50, 0.12),
        (0.40, 0.18),
        (0.60, -0.08),
        (0.35, 0.10),
        (0.50, 0.00),
        (0.42, 0.15),
        (0.33, 0.18),
    )
    legs: list[CourseLeg] = []
    for i, scenario in enumerate(training_scenarios()):
        lone = scenario.name.startswith("lone-")
        start_x, duration = (8.5, 12.0) if lone else (10.5, 9.0)
        if scenario.name == "lone-barrier":
            # patch sits below the line; dodge side is above
            starts = barrier_starts
        else:
            flip = 1.0 if i % 2 == 0 else -1.0
            starts = tuple((y * flip, th * flip) for y, th in offsets)
        legs.extend(
            CourseLeg(scenario, Pose(start_x, y0, th0), duration)
            for y0, th0 in starts
        )
    return legs


def test_scenarios() -> list[Scenario]:
    """Held-out layouts; none repeats a training footprint."""
    # Staggered lobes as in the lone training patches, scaled up.
    pond = [
        TerrainPatch(TerrainLabel.WATER, _blob((13.8, 0.60), 1.8, 0.7, 0.80)),
        TerrainPatch(TerrainLabel.WATER, _blob((16.0, 0.40), 1.8, 0.7, 0.80)),
    ]
    # One rubble field drawn as a slab whose near side falls away along the
    # direction of travel; an edge that recedes under the vehicle leaves
    # hold-last-command drift adding clearance instead of eating it. The
    # entry face climbs at 0.2 m/m, shallower than the turn rate the
    # planner actually commands, so the face never outruns the dodge.
    boulders = [
        TerrainPatch(
            TerrainLabel.ROCK,
            ConvexPolygon(
                np.array(
                    [
                        (17.6, -1.30),
                        (17.2, 0.07),
                        (14.4, 0.24),
                        (13.4, 0.22),
                        (12.4, 0.12),
                        (10.9, -0.18),
                        (11.6, -1.30),
                    ]
                )
            ),
        ),
    ]
    # Wall shifted off-center: the short way around is below, through mud.
    three_way = [
        TerrainPatch(TerrainLabel.NON_TRAVERSABLE, Rect((15.0, -0.15), (16.0, 0.45))),
        TerrainPatch(TerrainLabel.WATER, Rect((15.0, 0.45), (16.0, WALL_HALF_WIDTH))),
        TerrainPatch(TerrainLabel.MUD, Rect((15.0, -WALL_HALF_WIDTH), (16.0, -0.15))),
    ]
    # Water sits on the line so staying put is the expensive choice; rock
    # caps the upper flank, leaving mud as the cheap crossing below.
    triple_band = [
        TerrainPatch(TerrainLabel.WATER, Rect((15.0, -0.30), (16.0, 0.30))),
        TerrainPatch(TerrainLabel.ROCK, Rect((15.0, 0.30), (16.0, WALL_HALF_WIDTH))),
        TerrainPatch(TerrainLabel.MUD, Rect((15.0, -WALL_HALF_WIDTH), (16.0, -0.30))),
    ]
    puddle_in_mud = [
        TerrainPatch(TerrainLabel.MUD, Rect((13.6, -3.4), (15.6, 3.4))),
        TerrainPatch(TerrainLabel.WATER, _blob((14.6, 0.15), 0.8, 0.3, 0.45)),
    ]
    return [
        _scenario("pond", pond, "avoid"),
        _scenario("boulder-field", boulders, "avoid"),
        _gate(
            "gate-mud-in-barrier",
            TerrainLabel.NON_TRAVERSABLE,
            TerrainLabel.MUD,
            depth=1.0,
        ),
        _scenario("three-way-split", three_way, "mud"),
        _scenario("triple-band", triple_band, "mud"),
        _scenario("puddle-in-mud", puddle_in_mud, "mud"),
        _gate(
            "gate-rock-in-barrier",
            TerrainLabel.NON_TRAVERSABLE,
            TerrainLabel.ROCK,
            depth=0.75,
        ),
    ]


def holdout_scenario() -> Scenario:
    """Mud against water, a pairing the course never shows side by side.

    The straight line lands on water, so a planner that only chases the
    reference path fails here; crossing on mud requires having learned the
    ordering from the lone-patch legs.
    """
    return _side_by_side(
        "side-mud-over-water", TerrainLabel.WATER, TerrainLabel.MUD, edge=+0.15
    )


def all_scenarios() -> list[Scenario]:
    return [*training_scenarios(), *test_scenarios(), holdout_scenario(), empty_scenario()]


def scenario_by_name(name: str) -> Scenario:
    for scenario in all_scenarios():
        if scenario.name == name:
            return scenario
    known = ", ".join(s.name for s in all_scenarios())
    raise KeyError(f"no bundled scenario named {name!r} (known: {known})")
