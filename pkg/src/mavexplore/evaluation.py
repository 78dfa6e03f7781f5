"""Sparse 360-degree entropy raycasting and candidate pose evaluation.

A ray is marched at one tenth of the voxel size; each voxel it passes
through contributes its binary Shannon entropy once, until the first voxel
with occupancy above 0.5 stops the ray (that voxel contributes nothing) or
the maximum range is reached.  Yaw is then chosen by a circular sliding
window of the sensor's horizontal field of view over the per-column sums.

Everything here is read-only over a map snapshot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .octree import OccupancyOctree
from .planning import Path
from .types import TWO_PI, shortest_angle

TRAVEL_TIME_FLOOR = 0.1  # seconds; keeps utility finite for in-place looks

_SUBSTEPS = 10  # ray march samples per voxel side


@dataclass
class EntropyImage:
    """Per-ray entropy sums (nats) on a yaw x pitch grid; column j covers
    yaw j * yaw_step, rows cover the vertical field of view."""

    values: np.ndarray      # (m_rows, n_cols)
    yaw_step: float

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


@dataclass
class DepthImage360:
    """Hit distance per ray on the same grid; +inf where nothing was hit."""

    distances: np.ndarray   # (m_rows, n_cols)
    yaw_step: float


@dataclass
class CandidatePose:
    """A goal position with optimised yaw, windowed gain and utility."""

    position: np.ndarray
    yaw: float
    gain: float             # nats
    path: Path | None       # None for the stay-in-place candidate
    utility: float          # nats / s
    source: int | None = None


def voxel_entropy(p):
    """Binary Shannon entropy in nats, with 0 * ln 0 = 0."""
    p = np.asarray(p, dtype=float)
    h = -xlogy(p, p) - xlogy(1.0 - p, 1.0 - p)
    return float(h) if h.ndim == 0 else h


def _entropy_batch(tree: OccupancyOctree, origin, dirs, d_max: float, clip_box=None):
    """(entropy_sums, hit_distances) for a bundle of unit rays.

    Rays are marched at r/10; consecutive samples inside the same voxel
    collapse to one entry, so occupancy is gathered once per voxel run.
    With clip_box set, voxels entered outside that box contribute no
    entropy (rays still stop at occupied voxels wherever they are).
    """
    origin = np.asarray(origin, dtype=float).reshape(3)
    dirs = np.asarray(dirs, dtype=float).reshape(-1, 3)
    n = len(dirs)
    r = tree.resolution
    step = r / _SUBSTEPS
    n_steps = int(math.ceil(d_max / step - 1e-9))
    t = np.arange(n_steps) * step

    pts = origin[None, None, :] + dirs[:, None, :] * t[None, :, None]
    vox = np.floor((pts - tree.origin) / r).astype(np.int64)

    new_voxel = np.ones((n, n_steps), dtype=bool)
    new_voxel[:, 1:] = (vox[:, 1:] != vox[:, :-1]).any(axis=2)
    run = new_voxel.cumsum(axis=1) - 1           # voxel-run index per sample
    n_runs = run[:, -1] + 1
    width = int(n_runs.max())
    ray_i, sample_i = np.nonzero(new_voxel)
    run_i = run[ray_i, sample_i]

    vox_runs = np.zeros((n, width, 3), dtype=np.int64)
    vox_runs[ray_i, run_i] = vox[ray_i, sample_i]
    p_runs = np.zeros((n, width))
    p_runs[ray_i, run_i] = tree.gather_prob(vox[ray_i, sample_i])

    valid = np.arange(width)[None, :] < n_runs[:, None]
    occupied = (p_runs > 0.5) & valid
    any_occ = occupied.any(axis=1)
    first_occ = np.where(any_occ, occupied.argmax(axis=1), width)

    contributes = valid & (np.arange(width)[None, :] < first_occ[:, None])
    if clip_box is not None:
        entry_pts = pts[ray_i, sample_i]
        inside = (
            (entry_pts >= clip_box[0][None, :]) & (entry_pts <= clip_box[1][None, :])
        ).all(axis=1)
        in_box = np.zeros((n, width), dtype=bool)
        in_box[ray_i, run_i] = inside
        contributes &= in_box
    h = -xlogy(p_runs, p_runs) - xlogy(1.0 - p_runs, 1.0 - p_runs)
    sums = (h * contributes).sum(axis=1)

    hits = np.full(n, np.inf)
    if any_occ.any():
        rows = np.flatnonzero(any_occ)
        hv = vox_runs[rows, first_occ[rows]]
        d = dirs[rows]
        safe = np.where(d != 0.0, d, 1e-300)
        lo = tree.origin + hv * r
        entry = np.where(d > 0, lo, lo + r)
        t_entry = (entry - origin) / safe
        t_entry = np.where(d != 0.0, t_entry, -np.inf).max(axis=1)
        hits[rows] = np.maximum(t_entry, 1e-12)
    return sums, hits


def ray_entropy(
    tree: OccupancyOctree, origin, direction, d_max: float
) -> tuple[float, float | None]:
    """Entropy sum along one ray plus the hit distance (None if no hit).

    Rays starting outside the map contribute nothing.
    """
    origin = np.asarray(origin, dtype=float).reshape(3)
    if not tree.in_bounds(tree.world_to_voxel(origin)):
        return 0.0, None
    sums, hits = _entropy_batch(tree, origin, np.asarray(direction, float), d_max)
    hit = float(hits[0])
    return float(sums[0]), (None if math.isinf(hit) else hit)


def raycast_entropy_360(
    tree: OccupancyOctree,
    position,
    yaw_step: float,
    pitch_step: float,
    fov_v: float,
    d_max: float,
    mount_pitch: float = 0.0,
    clip_box=None,
) -> tuple[EntropyImage, DepthImage360]:
    """Entropy and depth over a full yaw circle and the vertical FoV.

    Column j points at yaw j * yaw_step; rows span the vertical field of
    view centred on the camera mount pitch.  clip_box, when given, limits
    entropy contributions to the exploration volume: what lies outside it
    is not part of the task, so it carries no gain.
    """
    n = int(math.ceil(TWO_PI / yaw_step - 1e-9))
    m = int(math.ceil(fov_v / pitch_step - 1e-9))
    position = np.asarray(position, dtype=float).reshape(3)
    if not tree.in_bounds(tree.world_to_voxel(position)):
        return (
            EntropyImage(np.zeros((m, n)), yaw_step),
            DepthImage360(np.full((m, n), np.inf), yaw_step),
        )
    yaws = np.arange(n) * yaw_step
    pitches = mount_pitch - fov_v / 2.0 + (np.arange(m) + 0.5) * pitch_step
    cy, sy = np.cos(yaws), np.sin(yaws)
    cp, sp = np.cos(pitches), np.sin(pitches)
    dirs = np.empty((m, n, 3))
    dirs[:, :, 0] = cp[:, None] * cy[None, :]
    dirs[:, :, 1] = cp[:, None] * sy[None, :]
    dirs[:, :, 2] = np.broadcast_to(sp[:, None], (m, n))
    sums, hits = _entropy_batch(tree, position, dirs.reshape(-1, 3), d_max, clip_box)
    return (
        EntropyImage(sums.reshape(m, n), yaw_step),
        DepthImage360(hits.reshape(m, n), yaw_step),
    )


def optimal_yaw(image: EntropyImage, fov_h: float) -> tuple[float, float]:
    """Yaw of the fov_h-wide circular window with the largest entropy sum.

    Ties break toward the smallest column index.
    """
    if not fov_h < TWO_PI:
        raise ValueError("horizontal field of view must be below 2*pi")
    col = image.values.sum(axis=0)
    n = image.n_cols
    w = min(max(1, int(math.ceil(fov_h / image.yaw_step - 1e-9))), n)
    offsets = np.arange(w) - w // 2
    idx = (np.arange(n)[:, None] + offsets[None, :]) % n
    gains = col[idx].sum(axis=1)
    j = int(np.argmax(gains))
    return j * image.yaw_step, float(gains[j])


def travel_time(
    path: Path | None, yaw_start: float, yaw_end: float, v_max: float, w_max: float
) -> float:
    """Max of translation and rotation time, floored at a small epsilon."""
    if v_max <= 0 or w_max <= 0:
        raise ValueError("rates must be positive")
    length = path.length if path is not None else 0.0
    t = max(length / v_max, abs(shortest_angle(yaw_end - yaw_start)) / w_max)
    return max(t, TRAVEL_TIME_FLOOR)


def utility(gain: float, travel_t: float) -> float:
    """Windowed map entropy over estimated travel time, nats per second."""
    if travel_t <= 0:
        raise ValueError("travel time must be positive")
    return gain / travel_t


def assign_intermediate_yaws(
    tree: OccupancyOctree,
    path: Path,
    yaw_start: float,
    yaw_end: float,
    yaw_step: float,
    pitch_step: float,
    fov_v: float,
    fov_h: float,
    d_max: float,
    mount_pitch: float = 0.0,
    clip_box=None,
) -> Path:
    """Attach yaws: endpoints keep theirs, each interior waypoint gets the
    entropy-optimal yaw from its own sparse raycast."""
    yaws = [yaw_start]
    for wp in path.waypoints[1:-1]:
        img, _ = raycast_entropy_360(
            tree, wp, yaw_step, pitch_step, fov_v, d_max, mount_pitch, clip_box
        )
        yaws.append(optimal_yaw(img, fov_h)[0])
    yaws.append(yaw_end)
    return Path(path.waypoints, np.asarray(yaws))


def write_pgm(path, values: np.ndarray, max_value: float) -> None:
    """Dump a 2D array as plain-text PGM, scaled so max_value maps to 255."""
    arr = np.asarray(values, dtype=float)
    scaled = np.clip(arr / max_value, 0.0, 1.0)
    scaled = np.where(np.isfinite(arr), scaled, 0.0)
    pixels = np.round(scaled * 255).astype(int)
    with open(path, "w") as fh:
        fh.write(f"P2\n{pixels.shape[1]} {pixels.shape[0]}\n255\n")
        for row in pixels:
            fh.write(" ".join(str(v) for v in row) + "\n")
