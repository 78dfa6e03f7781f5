"""Depth-image fusion into the octree and incremental frontier tracking.

A frontier voxel is a free voxel (probability < 0.5) with at least one of
its 6 face neighbours completely unobserved; neighbours outside the map
count as unobserved.  Frontier flags are re-evaluated only for voxels
touched by the latest integration and their face neighbours, never map-wide.
"""

from __future__ import annotations

import numpy as np

from .morton import encode_coords
from .octree import OccupancyOctree
from .types import DepthImage, MavState, SensorModel, camera_ray_directions

_FACE_NEIGHBOURS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
    dtype=np.int64,
)


class FrontierList:
    """Morton-sorted set of voxel-block codes holding >= 1 frontier voxel."""

    def __init__(self):
        self._members: set[int] = set()
        self._sorted: list[int] | None = []

    def update(self, code: int, frontier_count: int) -> None:
        if frontier_count >= 1:
            if code not in self._members:
                self._members.add(code)
                self._sorted = None
        elif code in self._members:
            self._members.discard(code)
            self._sorted = None

    @property
    def codes(self) -> list[int]:
        """Block codes ascending (z-order)."""
        if self._sorted is None:
            self._sorted = sorted(self._members)
        return self._sorted

    def __len__(self) -> int:
        return len(self._members)

    def __contains__(self, code: int) -> bool:
        return code in self._members

    def __iter__(self):
        return iter(self.codes)


def traverse_rays(tree: OccupancyOctree, origin, dirs, t_end):
    """Amanatides-Woo voxel walk for a bundle of rays from one origin.

    Returns (coords (M, 3), ray_ids (M,)): every voxel a ray passes through
    before its end distance, each exactly once per ray.  t_end must already
    be clipped to the map extent.
    """
    origin = np.asarray(origin, dtype=float).reshape(3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    t_end = np.asarray(t_end, dtype=float).reshape(-1)
    n = len(dirs)
    r = tree.resolution

    v0 = np.floor((origin - tree.origin) / r).astype(np.int64)
    nonzero = dirs != 0.0
    safe = np.where(nonzero, dirs, 1.0)
    inv = 1.0 / safe
    step = np.where(dirs > 0, 1, -1).astype(np.int64)
    t_delta = np.where(nonzero, r * np.abs(inv), np.inf)
    next_bound = tree.origin + (v0 + (dirs > 0)) * r
    t_max = np.where(nonzero, (next_bound - origin) * inv, np.inf)

    idx = np.flatnonzero(t_end > 0.0)
    v = np.broadcast_to(v0, (len(idx), 3)).copy()
    t_max = t_max[idx].copy()
    step = step[idx]
    t_delta = t_delta[idx]
    ends = t_end[idx]

    out_coords: list[np.ndarray] = []
    out_rays: list[np.ndarray] = []
    for _ in range(3 * tree.map_dim + 4):
        if idx.size == 0:
            break
        out_coords.append(v.copy())
        out_rays.append(idx.copy())
        axis = np.argmin(t_max, axis=1)
        rows = np.arange(len(idx))
        t_next = t_max[rows, axis]
        alive = t_next < ends
        if not alive.any():
            break
        idx = idx[alive]
        v = v[alive]
        axis = axis[alive]
        t_max = t_max[alive]
        step = step[alive]
        t_delta = t_delta[alive]
        ends = ends[alive]
        rows = np.arange(len(idx))
        v[rows, axis] += step[rows, axis]
        t_max[rows, axis] += t_delta[rows, axis]
    if not out_coords:
        return np.empty((0, 3), dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(out_coords), np.concatenate(out_rays)


def _map_exit_distance(tree: OccupancyOctree, origin, dirs) -> np.ndarray:
    """Distance at which each ray leaves the map cube (origin inside)."""
    lo, hi = tree.extent
    safe = np.where(dirs != 0.0, dirs, 1e-300)
    t1 = (lo - origin) / safe
    t2 = (hi - origin) / safe
    t_far = np.minimum(np.maximum(t1, t2), np.inf).min(axis=1)
    return np.maximum(t_far, 0.0)


def integrate_depth(
    tree: OccupancyOctree,
    state: MavState,
    image: DepthImage,
    model: SensorModel,
    mount_pitch: float = 0.0,
) -> np.ndarray:
    """Fuse one posed depth image; returns the unique updated voxels (M, 3).

    Every voxel between the camera and a sample point gets l_miss, the
    sample voxel gets l_hit; invalid pixels free-update out to d_max.  A
    voxel crossed by several rays receives every ray's update.  Cached node
    maxima are refreshed once at the end.
    """
    if image.width == 0 or image.height == 0:
        return np.empty((0, 3), dtype=np.int64)
    origin = state.position
    dirs = camera_ray_directions(
        image.width, image.height, image.fov_h, image.fov_v, state.yaw, mount_pitch
    )
    depths = image.depths.reshape(-1)
    valid = image.valid_mask().reshape(-1)
    t_end = np.where(valid, depths, image.d_max)

    t_exit = _map_exit_distance(tree, origin, dirs)
    t_trav = np.minimum(t_end, t_exit - 1e-9)

    miss_coords, ray_ids = traverse_rays(tree, origin, dirs, t_trav)

    # Hit voxel: nudge the sample point slightly past the surface so hits on
    # voxel-aligned faces land on the solid side for either ray direction.
    eps = 1e-4 * tree.resolution
    hit_pts = origin + dirs[valid] * (depths[valid, None] + eps)
    hit_coords = tree.world_to_voxel(hit_pts)
    hit_ok = tree.in_bounds(hit_coords)
    hit_coords = hit_coords[hit_ok]

    hit_code_by_ray = np.full(len(dirs), -1, dtype=np.int64)
    if len(hit_coords):
        rows = np.flatnonzero(valid)[hit_ok]
        hit_code_by_ray[rows] = encode_coords(hit_coords)
    if len(miss_coords):
        keep = encode_coords(miss_coords) != hit_code_by_ray[ray_ids]
        miss_coords = miss_coords[keep]

    coords = np.concatenate([miss_coords, hit_coords])
    if len(coords) == 0:
        return np.empty((0, 3), dtype=np.int64)
    deltas = np.concatenate(
        [
            np.full(len(miss_coords), model.l_miss, dtype=np.float32),
            np.full(len(hit_coords), model.l_hit, dtype=np.float32),
        ]
    )
    dirty = tree.apply_log_odds_batch(coords, deltas)
    tree.up_propagate(dirty)

    codes = encode_coords(coords)
    _, first = np.unique(codes, return_index=True)
    return coords[first]


def is_frontier(tree: OccupancyOctree, voxel) -> bool:
    """Free voxel (p < 0.5) touching unobserved space through a face."""
    v = np.asarray(voxel, dtype=np.int64)
    observed, log_odds, _ = tree.gather(v.reshape(1, 3))
    if not observed[0] or not log_odds[0] < 0.0:
        return False
    nb_obs, _, _ = tree.gather(v[None, :] + _FACE_NEIGHBOURS)
    return bool((~nb_obs).any())


def update_frontiers(
    tree: OccupancyOctree, frontiers: FrontierList, updated: np.ndarray
) -> None:
    """Re-evaluate frontier flags for updated voxels and their neighbours.

    No other voxel's flag can change; block counts and list membership are
    kept consistent with the stored masks.
    """
    updated = np.asarray(updated, dtype=np.int64).reshape(-1, 3)
    if len(updated) == 0:
        return
    cand = np.concatenate([updated, (updated[:, None, :] + _FACE_NEIGHBOURS).reshape(-1, 3)])
    cand = cand[tree.in_bounds(cand)]
    codes = encode_coords(cand)
    _, first = np.unique(codes, return_index=True)
    cand = cand[first]

    observed, log_odds, old_flag = tree.gather(cand)
    nb = (cand[:, None, :] + _FACE_NEIGHBOURS).reshape(-1, 3)
    nb_obs, _, _ = tree.gather(nb)
    unknown_any = (~nb_obs.reshape(len(cand), 6)).any(axis=1)
    new_flag = observed & (log_odds < 0.0) & unknown_any

    changed = new_flag != old_flag
    if not changed.any():
        return
    cc = cand[changed]
    cf = new_flag[changed]
    bc = encode_coords(cc >> 3)
    flat = ((cc[:, 0] & 7) << 6) | ((cc[:, 1] & 7) << 3) | (cc[:, 2] & 7)
    order = np.argsort(bc, kind="stable")
    sb = bc[order]
    starts = np.flatnonzero(np.r_[True, sb[1:] != sb[:-1]])
    ends = np.r_[starts[1:], len(sb)]
    for s, e in zip(starts, ends):
        code = int(sb[s])
        blk = tree.blocks[code]
        rows = order[s:e]
        blk.frontier_mask[flat[rows]] = cf[rows]
        blk.frontier_count = int(blk.frontier_mask.sum())
        frontiers.update(code, blk.frontier_count)


def explored_volume(tree: OccupancyOctree) -> float:
    """Observed voxel count times voxel volume, in cubic meters."""
    return tree.observed_count * tree.resolution**3
