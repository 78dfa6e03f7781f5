"""Scenario files: line-oriented world + configuration descriptions.

Grammar (one statement per line, `#` starts a comment):

    bounds x0 y0 z0 x1 y1 z1
    box    x0 y0 z0 x1 y1 z1      # repeatable obstacle
    start  x y z yaw
    <key> <value>                 # any configuration key below

`bounds` and `start` are required; unknown keys are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .planning import PlannerConfig
from .types import MavConfig, MavState, SensorModel
from .world import WorldModel


class ScenarioError(ValueError):
    pass


@dataclass
class ExplorationConfig:
    """Everything a run needs besides the world itself."""

    resolution: float = 0.2
    n_candidates: int = 20
    min_frontier_voxels: int = 8
    seed: int = 0
    sensor_rate_hz: float = 2.0
    control_dt: float = 0.05
    max_sim_time: float = 600.0
    start: MavState = field(default_factory=lambda: MavState(np.zeros(3)))
    mav: MavConfig = field(default_factory=MavConfig)
    sensor: SensorModel = field(default_factory=SensorModel)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    yaw_samples: int = 96    # 360-degree raycast columns
    pitch_samples: int = 8   # rows across the vertical FoV

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ScenarioError("n_candidates must be >= 1")
        for name in ("resolution", "sensor_rate_hz", "control_dt", "max_sim_time"):
            if getattr(self, name) <= 0:
                raise ScenarioError(f"{name} must be positive")

    @property
    def yaw_step(self) -> float:
        return 2.0 * math.pi / self.yaw_samples

    @property
    def pitch_step(self) -> float:
        return self.mav.fov_v / self.pitch_samples


_FLOAT_KEYS = {
    "resolution",
    "safety_radius",
    "v_max",
    "w_max",
    "d_max",
    "fov_h_deg",
    "fov_v_deg",
    "sensor_rate_hz",
    "control_dt",
    "l_hit",
    "l_miss",
    "mount_pitch_deg",
    "max_sim_time",
    "depth_noise_sigma",
}
_INT_KEYS = {
    "n_candidates",
    "seed",
    "min_frontier_voxels",
    "image_width",
    "image_height",
    "rrt_iterations",
    "yaw_samples",
    "pitch_samples",
}
KNOWN_KEYS = _FLOAT_KEYS | _INT_KEYS


def parse_scenario_text(text: str) -> dict:
    """Parse scenario source into a raw dict; diagnostics carry line numbers."""
    spec: dict = {"boxes": []}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        key, args = tokens[0], tokens[1:]

        def floats(n):
            if len(args) != n:
                raise ScenarioError(f"line {lineno}: '{key}' expects {n} numbers")
            try:
                return [float(a) for a in args]
            except ValueError:
                raise ScenarioError(f"line {lineno}: malformed number for '{key}'")

        if key == "bounds":
            v = floats(6)
            spec["bounds"] = np.array([v[:3], v[3:]])
        elif key == "box":
            v = floats(6)
            spec["boxes"].append(np.array([v[:3], v[3:]]))
        elif key == "start":
            v = floats(4)
            spec["start"] = v
        elif key in KNOWN_KEYS:
            if len(args) != 1:
                raise ScenarioError(f"line {lineno}: '{key}' expects one value")
            try:
                spec[key] = int(args[0]) if key in _INT_KEYS else float(args[0])
            except ValueError:
                raise ScenarioError(f"line {lineno}: malformed number for '{key}'")
        else:
            raise ScenarioError(f"line {lineno}: unknown key '{key}'")
    return spec


def build_scenario(spec: dict) -> tuple[WorldModel, ExplorationConfig]:
    if "bounds" not in spec:
        raise ScenarioError("missing required key 'bounds'")
    if "start" not in spec:
        raise ScenarioError("missing required key 'start'")
    world = WorldModel(spec["bounds"], spec["boxes"])
    sx, sy, sz, syaw = spec["start"]

    mav = MavConfig(
        v_max=spec.get("v_max", 1.5),
        w_max=spec.get("w_max", 0.75),
        safety_radius=spec.get("safety_radius", 0.5),
        mount_pitch=math.radians(spec.get("mount_pitch_deg", -15.0)),
        fov_h=math.radians(spec.get("fov_h_deg", 90.0)),
        fov_v=math.radians(spec.get("fov_v_deg", 60.0)),
        d_max=spec.get("d_max", 5.0),
        image_width=spec.get("image_width", 64),
        image_height=spec.get("image_height", 48),
        depth_noise_sigma=spec.get("depth_noise_sigma", 0.0),
    )
    sensor = SensorModel(l_hit=spec.get("l_hit", 0.85), l_miss=spec.get("l_miss", -0.4))
    resolution = spec.get("resolution", 0.2)
    planner = PlannerConfig(
        goal_tolerance=resolution,
        max_iterations=spec.get("rrt_iterations", 2000),
    )
    cfg = ExplorationConfig(
        resolution=resolution,
        n_candidates=spec.get("n_candidates", 20),
        min_frontier_voxels=spec.get("min_frontier_voxels", 8),
        seed=spec.get("seed", 0),
        sensor_rate_hz=spec.get("sensor_rate_hz", 2.0),
        control_dt=spec.get("control_dt", 0.05),
        max_sim_time=spec.get("max_sim_time", 600.0),
        start=MavState(np.array([sx, sy, sz]), syaw),
        mav=mav,
        sensor=sensor,
        planner=planner,
        yaw_samples=spec.get("yaw_samples", 96),
        pitch_samples=spec.get("pitch_samples", 8),
    )
    if not world.contains(cfg.start.position):
        raise ScenarioError("start position outside bounds")
    return world, cfg


def apply_overrides(spec: dict, overrides) -> dict:
    for key, value in (overrides or {}).items():
        if key not in KNOWN_KEYS:
            raise ScenarioError(f"unknown override key '{key}'")
        spec[key] = int(value) if key in _INT_KEYS else float(value)
    return spec


def load_scenario(path, overrides=None) -> tuple[WorldModel, ExplorationConfig]:
    """Parse a scenario file; raises ScenarioError with line diagnostics."""
    text = FsPath(path).read_text()
    return build_scenario(apply_overrides(parse_scenario_text(text), overrides))


def load_preset(name: str, overrides=None) -> tuple[WorldModel, ExplorationConfig]:
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset '{name}' (have {sorted(PRESETS)})")
    return build_scenario(apply_overrides(parse_scenario_text(PRESETS[name]), overrides))


# Parameter presets follow the simulated-experiment configurations; the
# geometry is an axis-aligned stand-in with the same footprint and the
# topological features (rooms, corridors, obstacles) that matter.

APARTMENT = """\
# 10 x 20 x 3 m multi-room apartment, doorways 2 m wide
bounds 0 0 0 10 20 3
start 2.0 2.0 1.2 0.0

# lower transverse wall with two doorways
box 0 8 0 2.4 8.4 3
box 4.4 8 0 7.2 8.4 3
box 9.2 8 0 10 8.4 3
# upper transverse wall with one doorway
box 0 14.4 0 4.0 14.8 3
box 6.0 14.4 0 10 14.8 3
# divider in the lower half
box 4.8 0 0 5.2 3.2 3
box 4.8 5.2 0 5.2 8 3
# divider in the upper half, offset from the doorway strip
box 5.6 16.8 0 6.0 20 3
# furniture
box 1.6 10.4 0 3.2 12.0 1.2
box 7.2 2.4 0 8.8 4.0 0.8
box 8.6 16.0 0 10 17.6 1.6

resolution 0.1
safety_radius 0.5
v_max 1.5
w_max 0.75
d_max 5
fov_h_deg 90
fov_v_deg 60
n_candidates 20
seed 7
sensor_rate_hz 2
control_dt 0.05
min_frontier_voxels 8
l_hit 0.85
l_miss -0.4
mount_pitch_deg -15
max_sim_time 600
"""

MAZE = """\
# 20 x 20 x 2.5 m serpentine corridor maze
bounds 0 0 0 20 20 2.5
start 2.0 2.0 1.2 0.0

box 4.0 0 0 4.4 16.0 2.5
box 8.0 4.0 0 8.4 20 2.5
box 12.0 0 0 12.4 16.0 2.5
box 16.0 4.0 0 16.4 20 2.5
# corridor stubs
box 0 10.0 0 2.0 10.4 2.5
box 18.4 9.6 0 20 10.0 2.5

resolution 0.1
safety_radius 0.5
v_max 1.5
w_max 0.75
d_max 5
fov_h_deg 115
fov_v_deg 60
n_candidates 20
seed 11
sensor_rate_hz 2
control_dt 0.05
min_frontier_voxels 8
l_hit 0.85
l_miss -0.4
mount_pitch_deg -15
max_sim_time 1200
"""

POWERPLANT = """\
# desk-scale outdoor-style stand-in: tall open volume around a central block
bounds 0 0 0 16 16 8
start 2.0 2.0 1.2 0.0

box 6.0 6.0 0 10.0 10.0 6.4
box 7.2 7.2 6.4 8.8 8.8 8.0
box 2.0 12.0 0 3.6 13.6 4.0
box 12.4 2.0 0 14.0 3.6 4.8

resolution 0.2
safety_radius 0.5
v_max 1.5
w_max 0.75
d_max 7
fov_h_deg 115
fov_v_deg 60
n_candidates 20
seed 5
sensor_rate_hz 2
control_dt 0.05
min_frontier_voxels 8
l_hit 0.85
l_miss -0.4
mount_pitch_deg -15
max_sim_time 1200
"""

PRESETS = {"apartment": APARTMENT, "maze": MAZE, "powerplant": POWERPLANT}
