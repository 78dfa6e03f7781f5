"""The closed exploration loop.

Deterministic time-stepped simulation: depth frames are integrated at the
sensor rate while the MAV follows the committed path to its endpoint, a new
plan is made between paths, and the run ends when no frontier clusters
remain.  The driver is the sole writer of the map and the MAV state.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path as FsPath

import numpy as np

from .evaluation import (
    CandidatePose,
    assign_intermediate_yaws,
    optimal_yaw,
    raycast_entropy_360,
    travel_time,
    utility,
    write_pgm,
)
from .integration import (
    FrontierList,
    explored_volume,
    integrate_depth,
    update_frontiers,
)
from .octree import LOG_ODDS_MIN, OccupancyOctree
from .planning import CollisionCache, Path, _segment_samples, collision_free_point, plan_path
from .sampling import filter_frontier_blocks, sample_candidates
from .scenarios import ExplorationConfig, PRESETS, load_preset, load_scenario
from .types import MavState, shortest_angle
from .world import WorldModel, observable_volume, render_depth, step_mav


class StartPoseError(RuntimeError):
    pass


_FACES = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
    dtype=np.int64,
)


def _actionable_frontier_voxels(tree, frontiers, bounds) -> dict[int, np.ndarray]:
    """Per block, the frontier voxels worth pursuing: those with an
    unobserved face neighbour overlapping the exploration volume.

    Frontier voxels whose only unknown neighbours lie outside the bounds
    (boundary-face straddles) can never be resolved by any sensor view, so
    chasing them would stall the run.
    """
    out: dict[int, np.ndarray] = {}
    codes = frontiers.codes
    if not codes:
        return out
    coords_parts = []
    flats_parts = []
    owner = []
    for code in codes:
        blk = tree.blocks[code]
        idx = np.flatnonzero(blk.frontier_mask)
        local = np.stack([idx >> 6, (idx >> 3) & 7, idx & 7], axis=1)
        coords_parts.append(blk.block_coords * 8 + local)
        flats_parts.append(idx)
        owner.append(np.full(len(idx), code, dtype=np.int64))
    coords = np.concatenate(coords_parts)
    flats = np.concatenate(flats_parts)
    owner = np.concatenate(owner)

    nb = (coords[:, None, :] + _FACES[None, :, :]).reshape(-1, 3)
    observed, _, _ = tree.gather(nb)
    cube_lo = tree.origin + nb * tree.resolution
    cube_hi = cube_lo + tree.resolution
    overlaps = (
        (np.minimum(cube_hi, bounds[1][None, :]) - np.maximum(cube_lo, bounds[0][None, :]))
        > 1e-9
    ).all(axis=1)
    useful = ((~observed) & overlaps).reshape(len(coords), 6).any(axis=1)
    for code in codes:
        sel = (owner == code) & useful
        if sel.any():
            out[code] = flats[sel]
    return out


@dataclass
class MetricsLog:
    """Per-planning-iteration time series; volume is non-decreasing."""

    rows: list[tuple] = field(default_factory=list)

    HEADER = "t_s,explored_volume_m3,frontier_blocks,iteration,plan_time_ms"

    def append(self, t_s, volume, frontier_blocks, iteration, plan_ms):
        self.rows.append((t_s, volume, frontier_blocks, iteration, plan_ms))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.HEADER + "\n")
            for t, v, f, i, ms in self.rows:
                fh.write(f"{t:.3f},{v:.6f},{f},{i},{ms:.3f}\n")

    def plan_time_stats(self) -> tuple[float, float]:
        if not self.rows:
            return 0.0, 0.0
        times = np.array([row[4] for row in self.rows])
        return float(times.mean()), float(times.std())


@dataclass
class IterationPlan:
    status: str                               # "path" | "complete"
    targets: list[tuple[np.ndarray, float]] = field(default_factory=list)
    best: CandidatePose | None = None
    n_candidates: int = 0
    n_evaluated: int = 0
    attempts: int = 1
    warning: str | None = None


@dataclass
class RunResult:
    status: str                               # "complete" | "timeout"
    warning: str | None
    metrics: MetricsLog
    tree: OccupancyOctree
    frontiers: FrontierList
    world: WorldModel
    config: ExplorationConfig
    final_state: MavState
    sim_time: float
    iterations: int
    explored_m3: float
    observable_m3: float
    path_audit_violations: int
    step_violations: int
    committed: list

    @property
    def coverage(self) -> float:
        return self.explored_m3 / self.observable_m3 if self.observable_m3 else 0.0

    @property
    def exit_code(self) -> int:
        return 0 if self.status == "complete" else 2


def plan_iteration(
    tree: OccupancyOctree,
    frontiers: FrontierList,
    state: MavState,
    cfg: ExplorationConfig,
    rng: np.random.Generator,
    bounds=None,
    dump=None,
) -> IterationPlan:
    """One planning iteration: sample candidates, plan paths, evaluate
    views, commit to the highest-utility pose.

    Exploration is complete when the filtered frontier list is empty.  If a
    whole round of candidates yields nothing plannable, fresh samples are
    drawn up to 3 times before giving up with a warning.
    """
    if bounds is not None:
        actionable = _actionable_frontier_voxels(tree, frontiers, bounds)
        filtered = [
            code
            for code in frontiers.codes
            if len(actionable.get(code, ())) >= cfg.min_frontier_voxels
        ]
    else:
        actionable = None
        filtered = filter_frontier_blocks(frontiers, tree, cfg.min_frontier_voxels)
    if not filtered:
        return IterationPlan("complete")

    mav = cfg.mav
    radius = mav.safety_radius
    checker = CollisionCache(tree, radius)
    for attempt in range(1, 4):
        candidates = sample_candidates(
            filtered, tree, cfg.n_candidates, state, rng, frontier_voxels=actionable
        )
        poses: list[CandidatePose] = []
        for ci, cand in enumerate(candidates):
            if cand.source is None:
                path = None
                position = state.position
            else:
                if bounds is not None and (
                    (cand.position < bounds[0]).any() or (cand.position > bounds[1]).any()
                ):
                    continue
                path = plan_path(
                    tree,
                    state.position,
                    cand.position,
                    radius,
                    cfg.planner,
                    rng,
                    bounds=bounds,
                    checker=checker,
                )
                if path is None:
                    # Blocks span several meters at coarse resolutions and a
                    # random voxel can sit deep inside unknown space; give
                    # the block one more chance at its most approachable
                    # frontier voxel before discarding it.
                    retry = _nearest_frontier_voxel(
                        tree, cand.source, state.position, actionable
                    )
                    if retry is not None and not np.allclose(retry, cand.position):
                        path = plan_path(
                            tree,
                            state.position,
                            retry,
                            radius,
                            cfg.planner,
                            rng,
                            bounds=bounds,
                            checker=checker,
                        )
                if path is None:
                    continue
                position = path.waypoints[-1]
            entropy_img, depth_img = raycast_entropy_360(
                tree,
                position,
                cfg.yaw_step,
                cfg.pitch_step,
                mav.fov_v,
                mav.d_max,
                mav.mount_pitch,
                clip_box=bounds,
            )
            yaw, gain = optimal_yaw(entropy_img, mav.fov_h)
            moved = path is not None and path.length > 1e-9
            if not moved and abs(shortest_angle(yaw - state.yaw)) < cfg.yaw_step:
                continue  # would neither move nor rotate by even one ray column
            t_travel = travel_time(path, state.yaw, yaw, mav.v_max, mav.w_max)
            poses.append(
                CandidatePose(position, yaw, gain, path, utility(gain, t_travel), cand.source)
            )
            if dump is not None:
                dump(ci, entropy_img, depth_img)
        if poses:
            best = max(poses, key=lambda c: c.utility)
            if best.path is not None:
                best.path = assign_intermediate_yaws(
                    tree,
                    best.path,
                    state.yaw,
                    best.yaw,
                    cfg.yaw_step,
                    cfg.pitch_step,
                    mav.fov_v,
                    mav.fov_h,
                    mav.d_max,
                    mav.mount_pitch,
                    clip_box=bounds,
                )
                targets = [
                    (wp.copy(), float(y))
                    for wp, y in zip(best.path.waypoints[1:], best.path.yaws[1:])
                ]
            else:
                targets = [(state.position.copy(), best.yaw)]
            return IterationPlan(
                "path", targets, best, len(candidates), len(poses), attempt
            )
    return IterationPlan(
        "complete",
        attempts=3,
        warning="no reachable candidates after 3 sampling rounds",
    )


def _nearest_frontier_voxel(tree, code, position, actionable) -> np.ndarray | None:
    """Center of the block's (actionable) frontier voxel closest to position."""
    blk = tree.blocks.get(code)
    if blk is None:
        return None
    if actionable is not None:
        idx = actionable.get(code)
        if idx is None or len(idx) == 0:
            return None
    else:
        idx = np.flatnonzero(blk.frontier_mask)
        if len(idx) == 0:
            return None
    local = np.stack([idx >> 6, (idx >> 3) & 7, idx & 7], axis=1)
    centers = tree.voxel_center(blk.block_coords * 8 + local)
    d2 = ((centers - np.asarray(position, float)) ** 2).sum(axis=1)
    return centers[int(np.argmin(d2))]


def _bootstrap_clear(tree, frontiers, center, radius):
    """Mark the take-off sphere as free: the MAV occupies it, and the camera
    can never observe its own position."""
    r = tree.resolution
    a = np.floor((center - radius - tree.origin) / r).astype(np.int64)
    b = np.ceil((center + radius - tree.origin) / r).astype(np.int64) - 1
    axes = [np.arange(a[i], b[i] + 1) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    cube_lo = tree.origin + grid * r
    nearest = np.clip(center, cube_lo, cube_lo + r)
    touching = ((nearest - center) ** 2).sum(axis=1) <= radius * radius
    coords = grid[touching]
    coords = coords[tree.in_bounds(coords)]
    dirty = tree.apply_log_odds_batch(coords, np.full(len(coords), LOG_ODDS_MIN))
    tree.up_propagate(dirty)
    update_frontiers(tree, frontiers, coords)


def _audit_path(tree, path: Path, radius, spacing) -> int:
    """Dense safety re-check of a committed path against the planning map."""
    violations = 0
    wp = path.waypoints
    for i in range(len(wp) - 1):
        for s in _segment_samples(wp[i], wp[i + 1], spacing):
            if not collision_free_point(tree, s, radius):
                violations += 1
    return violations


def export_metrics(log: MetricsLog, path) -> None:
    log.to_csv(path)


def export_map(tree: OccupancyOctree, path) -> None:
    tree.export_observed(path)


def run_exploration(
    scenario,
    overrides=None,
    out_dir=None,
    wall_timeout=None,
    dump_entropy_images=False,
    audit_steps=False,
    log=None,
) -> RunResult:
    """Run a scenario (file path or preset name) to completion.

    Writes metrics.csv and map.txt into out_dir when given.  Identical
    seeds give identical simulations; plan_time_ms is the only wall-clock
    column in the metrics.
    """
    name = str(scenario)
    if os.path.exists(name):
        world, cfg = load_scenario(name, overrides)
    elif name in PRESETS:
        world, cfg = load_preset(name, overrides)
    else:
        raise FileNotFoundError(f"no scenario file or preset named '{name}'")

    rng = np.random.default_rng(cfg.seed)
    radius = cfg.mav.safety_radius
    res = cfg.resolution
    state = cfg.start.copy()
    clearance = world.clearance(state.position)
    if world.point_in_obstacle(state.position) or clearance < radius:
        raise StartPoseError(
            f"start pose in collision: clearance {clearance:.3f} m "
            f"< safety radius {radius:.3f} m"
        )

    tree = OccupancyOctree.from_bounds(world.bounds, res)
    frontiers = FrontierList()
    _bootstrap_clear(tree, frontiers, state.position, radius + 2 * res)

    sim_t = 0.0
    frame_period = 1.0 / cfg.sensor_rate_hz
    next_frame = 0.0
    step_violations = 0

    def integrate_frame():
        image = render_depth(world, state, cfg.mav, rng if cfg.mav.depth_noise_sigma > 0 else None)
        updated = integrate_depth(tree, state, image, cfg.sensor, cfg.mav.mount_pitch)
        update_frontiers(tree, frontiers, updated)

    integrate_frame()
    next_frame = frame_period

    out_path = FsPath(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    dump_hook = None
    entropy_bound = math.log(2.0) * (math.sqrt(3.0) * cfg.mav.d_max / res + 4.0)

    metrics = MetricsLog()
    committed: list = []
    iteration = 0
    audit_violations = 0
    no_progress = 0
    status = "complete"
    warning = None
    deadline = time.monotonic() + wall_timeout if wall_timeout else None

    while True:
        if dump_entropy_images and out_path is not None:
            img_dir = out_path / "entropy"
            img_dir.mkdir(exist_ok=True)

            def dump_hook(ci, entropy_img, depth_img, _it=iteration, _dir=img_dir):
                write_pgm(
                    _dir / f"iter{_it:04d}_cand{ci:02d}_entropy.pgm",
                    entropy_img.values,
                    entropy_bound,
                )
                write_pgm(
                    _dir / f"iter{_it:04d}_cand{ci:02d}_depth.pgm",
                    np.where(
                        np.isfinite(depth_img.distances),
                        cfg.mav.d_max - depth_img.distances,
                        0.0,
                    ),
                    cfg.mav.d_max,
                )

        t0 = time.perf_counter()
        plan = plan_iteration(
            tree, frontiers, state, cfg, rng, bounds=world.bounds, dump=dump_hook
        )
        plan_ms = (time.perf_counter() - t0) * 1e3
        metrics.append(sim_t, explored_volume(tree), len(frontiers), iteration, plan_ms)
        if log:
            log(
                f"iter {iteration:3d}  t={sim_t:7.1f}s  vol={explored_volume(tree):8.2f} m3  "
                f"frontier_blocks={len(frontiers):4d}  plan={plan_ms:7.1f} ms"
            )
        if plan.status == "complete":
            warning = plan.warning
            break

        if plan.best is not None and plan.best.path is not None:
            audit_violations += _audit_path(tree, plan.best.path, radius, res / 4.0)
        committed.append((iteration, [(wp.copy(), yaw) for wp, yaw in plan.targets]))

        observed_before = tree.observed_count
        timed_out = False
        for wp, target_yaw in plan.targets:
            steps = 0
            while (
                np.linalg.norm(state.position - wp) > 1e-9
                or abs(shortest_angle(target_yaw - state.yaw)) > 1e-9
            ):
                state = step_mav(state, (wp, target_yaw), cfg.control_dt, cfg.mav)
                sim_t += cfg.control_dt
                while sim_t >= next_frame - 1e-9:
                    integrate_frame()
                    next_frame += frame_period
                if audit_steps and not collision_free_point(tree, state.position, radius):
                    step_violations += 1
                if sim_t > cfg.max_sim_time:
                    timed_out = True
                    break
                steps += 1
                if deadline is not None and steps % 64 == 0 and time.monotonic() > deadline:
                    timed_out = True
                    break
            if timed_out:
                break
        integrate_frame()  # the arrival view is what the flight was for
        iteration += 1
        if timed_out:
            status = "timeout"
            warning = "time budget exhausted"
            break
        if tree.observed_count == observed_before:
            no_progress += 1
            if no_progress >= 6:
                warning = (
                    "6 consecutive paths observed nothing new; remaining "
                    "frontiers deemed unobservable"
                )
                break
        else:
            no_progress = 0

    observable = observable_volume(world, res, cfg.start.position)
    result = RunResult(
        status=status,
        warning=warning,
        metrics=metrics,
        tree=tree,
        frontiers=frontiers,
        world=world,
        config=cfg,
        final_state=state,
        sim_time=sim_t,
        iterations=iteration,
        explored_m3=explored_volume(tree),
        observable_m3=observable,
        path_audit_violations=audit_violations,
        step_violations=step_violations,
        committed=committed,
    )
    if out_path is not None:
        export_metrics(metrics, out_path / "metrics.csv")
        export_map(tree, out_path / "map.txt")
    return result
