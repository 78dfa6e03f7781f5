"""Ground-truth environment, synthetic depth camera, kinematic MAV motion.

Environments are unions of axis-aligned boxes inside a bounding box whose
faces are solid walls.  All functions are pure over immutable world data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .types import DepthImage, MavConfig, MavState, camera_ray_directions, shortest_angle, wrap_angle


@dataclass
class WorldModel:
    """Exploration bounds plus axis-aligned box obstacles; bounds faces are solid."""

    bounds: np.ndarray                       # (2, 3) min/max corners, meters
    obstacles: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=float).reshape(2, 3)
        if not (self.bounds[1] > self.bounds[0]).all():
            raise ValueError("bounds must be non-degenerate")
        self.obstacles = [np.asarray(o, dtype=float).reshape(2, 3) for o in self.obstacles]
        for o in self.obstacles:
            if not (o[1] > o[0]).all():
                raise ValueError("degenerate obstacle box")
            if (o[0] >= self.bounds[1]).any() or (o[1] <= self.bounds[0]).any():
                raise ValueError("obstacle does not intersect bounds")

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool((p >= self.bounds[0]).all() and (p <= self.bounds[1]).all())

    def point_in_obstacle(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return any(((p >= o[0]) & (p <= o[1])).all() for o in self.obstacles)

    def clearance(self, point) -> float:
        """Distance from a point to the nearest solid (obstacle or wall)."""
        p = np.asarray(point, dtype=float)
        d_wall = float(np.minimum(p - self.bounds[0], self.bounds[1] - p).min())
        best = d_wall
        for o in self.obstacles:
            gap = np.maximum(np.maximum(o[0] - p, p - o[1]), 0.0)
            d = float(np.linalg.norm(gap))
            if ((p >= o[0]) & (p <= o[1])).all():
                d = 0.0
            best = min(best, d)
        return best


def ray_intersect_batch(world: WorldModel, origin, dirs, d_max: float) -> np.ndarray:
    """Nearest surface distance per ray; +inf where nothing within d_max.

    Origin is assumed inside the bounds, so the bounds faces are hit from
    the inside.  Rays starting inside an obstacle report distance 0.
    """
    origin = np.asarray(origin, dtype=float).reshape(3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    safe = np.where(dirs != 0.0, dirs, 1e-300)
    inv = 1.0 / safe

    t1 = (world.bounds[0] - origin) * inv
    t2 = (world.bounds[1] - origin) * inv
    best = np.maximum(t1, t2).min(axis=1)  # exit through the inner wall faces

    for box in world.obstacles:
        t1 = (box[0] - origin) * inv
        t2 = (box[1] - origin) * inv
        t_near = np.minimum(t1, t2).max(axis=1)
        t_far = np.maximum(t1, t2).min(axis=1)
        hit = (t_near <= t_far) & (t_far > 0.0)
        t = np.where(hit, np.maximum(t_near, 0.0), np.inf)
        best = np.minimum(best, t)
    return np.where(best <= d_max, best, np.inf)


def ray_intersect(world: WorldModel, origin, direction, d_max: float) -> float | None:
    """Single-ray version; returns None beyond d_max."""
    t = float(ray_intersect_batch(world, origin, np.asarray(direction), d_max)[0])
    return None if math.isinf(t) else t


def render_depth(
    world: WorldModel, state: MavState, cfg: MavConfig, rng: np.random.Generator | None = None
) -> DepthImage:
    """Pinhole range image from the mounted camera at the given MAV state."""
    dirs = camera_ray_directions(
        cfg.image_width, cfg.image_height, cfg.fov_h, cfg.fov_v, state.yaw, cfg.mount_pitch
    )
    t = ray_intersect_batch(world, state.position, dirs, cfg.d_max)
    if cfg.depth_noise_sigma > 0.0 and rng is not None:
        noisy = t + rng.normal(0.0, cfg.depth_noise_sigma, size=t.shape)
        t = np.where(np.isfinite(t), np.clip(noisy, 1e-3, cfg.d_max), np.inf)
    depths = t.reshape(cfg.image_height, cfg.image_width)
    return DepthImage(cfg.image_width, cfg.image_height, depths, cfg.fov_h, cfg.fov_v, cfg.d_max)


def step_mav(state: MavState, target, dt: float, cfg: MavConfig) -> MavState:
    """First-order step toward a (position, yaw) target, clamped at it.

    Positional advance is at most v_max*dt along the segment; yaw rotates
    along the shorter arc by at most w_max*dt.
    """
    target_pos, target_yaw = target
    target_pos = np.asarray(target_pos, dtype=float).reshape(3)
    delta = target_pos - state.position
    dist = float(np.linalg.norm(delta))
    reach = cfg.v_max * dt
    if dist <= reach:
        new_pos = target_pos.copy()
    else:
        new_pos = state.position + delta * (reach / dist)
    dyaw = shortest_angle(float(target_yaw) - state.yaw)
    max_rot = cfg.w_max * dt
    if abs(dyaw) <= max_rot:
        new_yaw = float(target_yaw)
    else:
        new_yaw = state.yaw + math.copysign(max_rot, dyaw)
    return MavState(new_pos, wrap_angle(new_yaw))


def grid_geometry(bounds, resolution: float, pad_blocks: int = 1):
    """(origin, map_dim) matching OccupancyOctree.from_bounds, shared so the
    observability oracle and the live map agree on voxel indexing."""
    bounds = np.asarray(bounds, dtype=float).reshape(2, 3)
    pad = pad_blocks * 8
    size = bounds[1] - bounds[0]
    need = int(np.max(np.ceil(size / resolution))) + 2 * pad
    map_dim = 8
    while map_dim < need:
        map_dim *= 2
    return bounds[0] - pad * resolution, map_dim


def observable_volume(world: WorldModel, resolution: float, start) -> float:
    """Volume the sensor could ever map, by flood fill from the start voxel.

    Free voxels 6-connected to the start voxel, plus the shell of solid
    voxels those free voxels expose (the surfaces rays can strike).  Voxel
    indexing matches the octree so the result is a fair coverage
    denominator.
    """
    origin, _ = grid_geometry(world.bounds, resolution)
    r = resolution
    tol = 1e-9
    lo_idx = np.floor((world.bounds[0] - origin) / r - tol).astype(int) - 1
    hi_idx = np.ceil((world.bounds[1] - origin) / r + tol).astype(int) + 1
    shape = tuple(hi_idx - lo_idx)

    cube_lo = [origin[i] + (lo_idx[i] + np.arange(shape[i])) * r for i in range(3)]
    cube_hi = [lo + r for lo in cube_lo]

    def box_mask(box, strict_inside=False):
        # strict_inside: voxel cube fully within box; else positive-volume overlap
        m = np.ones(shape, dtype=bool)
        for i in range(3):
            if strict_inside:
                ok = (cube_lo[i] >= box[0][i] - tol) & (cube_hi[i] <= box[1][i] + tol)
            else:
                ok = (np.minimum(cube_hi[i], box[1][i]) - np.maximum(cube_lo[i], box[0][i])) > tol
            m &= ok.reshape([shape[i] if j == i else 1 for j in range(3)])
        return m

    free = box_mask(world.bounds, strict_inside=True)
    for obs in world.obstacles:
        free &= ~box_mask(obs)

    start_idx = tuple(np.floor((np.asarray(start, dtype=float) - origin) / r).astype(int) - lo_idx)
    if not all(0 <= start_idx[i] < shape[i] for i in range(3)) or not free[start_idx]:
        raise ValueError("start voxel is not inside free space")

    structure = ndimage.generate_binary_structure(3, 1)
    labels, _ = ndimage.label(free, structure=structure)
    reachable = labels == labels[start_idx]
    # Grazing rays strike voxels diagonal to the exposed surface too, so
    # the strikable shell dilates with full 26-connectivity.
    shell = ~free & ndimage.binary_dilation(
        reachable, structure=ndimage.generate_binary_structure(3, 3)
    )
    return float(reachable.sum() + shell.sum()) * r**3
