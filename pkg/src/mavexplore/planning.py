"""Collision-free path planning over the occupancy map.

Informed RRT* restricted to known-free space, with shortcut simplification
and safe endpoint truncation: frontier goals sit next to unknown space, so
the returned path ends at the collision-free tree node nearest the goal.

Point checks test the exact set of voxels intersecting the safety sphere;
segment checks run a sphere chain at spacing <= r/2 with the radius
inflated by half the spacing, which makes the chain a true superset of the
swept cylinder.  Unknown space never passes either check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .octree import OccupancyOctree

_SQRT3_HALF = math.sqrt(3.0) / 2.0


@dataclass
class Path:
    """Ordered waypoints in R^3, optionally with per-waypoint yaw."""

    waypoints: np.ndarray
    yaws: np.ndarray | None = None

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 3)
        if len(self.waypoints) < 2:
            raise ValueError("a path needs at least 2 waypoints")
        seg = np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)
        if (seg < 1e-12).any():
            raise ValueError("consecutive waypoints must be distinct")
        if self.yaws is not None:
            self.yaws = np.asarray(self.yaws, dtype=float).reshape(-1)
            if len(self.yaws) != len(self.waypoints):
                raise ValueError("need one yaw per waypoint")
        self._length = float(seg.sum())

    @property
    def length(self) -> float:
        return self._length


@dataclass
class PlannerConfig:
    step_size: float = 0.5
    goal_tolerance: float = 0.1           # success radius at the goal, one voxel
    max_iterations: int = 2000
    post_solution_iterations: int = 200   # early exit after the first solution
    stall_iterations: int = 600           # give up if no approach progress
    rewire_gamma: float = 1.5             # radius = gamma * (log n / n)^(1/3), m
    simplify_passes: int = 3
    goal_bias: float = 0.05

    def __post_init__(self):
        for name in (
            "step_size",
            "goal_tolerance",
            "max_iterations",
            "post_solution_iterations",
            "stall_iterations",
            "rewire_gamma",
            "simplify_passes",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def _segment_samples(a: np.ndarray, b: np.ndarray, spacing: float) -> np.ndarray:
    """Points along [a, b] at spacing <= `spacing`, endpoints included."""
    length = float(np.linalg.norm(b - a))
    n = max(1, math.ceil(length / spacing))
    t = np.linspace(0.0, 1.0, n + 1)
    return a[None, :] + t[:, None] * (b - a)[None, :]


def collision_free_point(tree: OccupancyOctree, point, radius: float) -> bool:
    """True iff every voxel intersecting the safety sphere is known free."""
    return tree.sphere_free(point, radius)


def collision_free_segment(tree: OccupancyOctree, a, b, radius: float) -> bool:
    """Swept-cylinder check via an inflated sphere chain (conservative)."""
    a = np.asarray(a, dtype=float).reshape(3)
    b = np.asarray(b, dtype=float).reshape(3)
    spacing = tree.resolution / 2.0
    inflated = radius + spacing / 2.0
    return all(tree.sphere_free(s, inflated) for s in _segment_samples(a, b, spacing))


class CollisionCache:
    """Voxel-quantised, memoised free-space tests over one map snapshot.

    Probes are inflated by the voxel half-diagonal so that admitting a
    quantised probe implies the exact check at the true position passes;
    the planner can then share results across thousands of nearby queries.
    Only valid while the map version does not change.
    """

    TARGET_CELL = 0.05  # meters; quantisation grain for memoised probes

    def __init__(self, tree: OccupancyOctree, radius: float):
        self.tree = tree
        self.version = tree.version
        self.spacing = max(tree.resolution / 4.0, self.TARGET_CELL)
        div = max(1, round(tree.resolution / self.TARGET_CELL))
        cell = tree.resolution / div
        q = cell * _SQRT3_HALF
        self._radii = (radius + q, radius + self.spacing / 2.0 + q)
        self._cache: dict[tuple, bool] = {}
        self._ox, self._oy, self._oz = (float(v) for v in tree.origin)
        self._inv_cell = 1.0 / cell
        self._cell = cell

    def _probe(self, x: float, y: float, z: float, kind: int) -> bool:
        cx = math.floor((x - self._ox) * self._inv_cell)
        cy = math.floor((y - self._oy) * self._inv_cell)
        cz = math.floor((z - self._oz) * self._inv_cell)
        key = (kind, cx, cy, cz)
        hit = self._cache.get(key)
        if hit is None:
            center = (
                self._ox + (cx + 0.5) * self._cell,
                self._oy + (cy + 0.5) * self._cell,
                self._oz + (cz + 0.5) * self._cell,
            )
            hit = self.tree.sphere_free(center, self._radii[kind])
            self._cache[key] = hit
        return hit

    def point_free(self, point) -> bool:
        return self._probe(float(point[0]), float(point[1]), float(point[2]), 0)

    def segment_free(self, a, b) -> bool:
        ax, ay, az = float(a[0]), float(a[1]), float(a[2])
        bx, by, bz = float(b[0]), float(b[1]), float(b[2])
        length = math.sqrt((bx - ax) ** 2 + (by - ay) ** 2 + (bz - az) ** 2)
        n = max(1, math.ceil(length / self.spacing))
        for k in range(n + 1):
            t = k / n
            if not self._probe(
                ax + t * (bx - ax), ay + t * (by - ay), az + t * (bz - az), 1
            ):
                return False
        return True


def _goal_region_has_free_voxel(tree: OccupancyOctree, goal, near_tol: float) -> bool:
    """Any known-free voxel whose center lies within near_tol (+ slack) of
    the goal?  False guarantees plan_path could never succeed."""
    reach = near_tol + tree.resolution
    a = tree.world_to_voxel(goal - reach)
    b = tree.world_to_voxel(goal + reach)
    axes = [np.arange(a[i], b[i] + 1) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    centers = tree.voxel_center(grid)
    near = ((centers - np.asarray(goal, float)) ** 2).sum(axis=1) <= reach * reach
    observed, log_odds, _ = tree.gather(grid[near])
    return bool((observed & (log_odds < 0.0)).any())


def _goal_region_admits_node(
    checker: "CollisionCache", goal, near_tol: float, lo, hi, rng
) -> bool:
    """Can any probed point near the goal host the safety sphere?

    A lattice over the ball plus a few random draws; heuristic (a miss does
    not prove infeasibility) but tight pockets an RRT could actually use
    are rarely smaller than this grid.
    """
    goal = np.asarray(goal, dtype=float)
    half = near_tol / 2.0
    for ox in (-half, 0.0, half):
        for oy in (-half, 0.0, half):
            for oz in (-half, 0.0, half):
                p = goal + np.array([ox, oy, oz])
                if (p >= lo).all() and (p <= hi).all() and checker.point_free(p):
                    return True
    for _ in range(40):
        p = goal + _unit_ball_sample(rng) * near_tol
        if (p >= lo).all() and (p <= hi).all() and checker.point_free(p):
            return True
    return False


def _unit_ball_sample(rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=3)
    n = np.linalg.norm(g)
    if n < 1e-12:
        return np.zeros(3)
    return g / n * rng.uniform() ** (1.0 / 3.0)


def _ellipsoid_frame(start, goal):
    """Rotation whose first column points start->goal, for informed sampling."""
    c_min = float(np.linalg.norm(goal - start))
    a1 = (goal - start) / c_min
    ref = np.array([0.0, 0.0, 1.0]) if abs(a1[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    a2 = np.cross(a1, ref)
    a2 /= np.linalg.norm(a2)
    a3 = np.cross(a1, a2)
    return np.stack([a1, a2, a3], axis=1), c_min


def _informed_sample(
    rng: np.random.Generator, center, rot, c_min: float, c_best: float, lo, hi
) -> np.ndarray:
    """Uniform sample from the prolate spheroid with transverse diameter
    c_best, rejected against the sampling box."""
    if c_best <= c_min + 1e-9:
        c_best = c_min + 1e-9
    r1 = c_best / 2.0
    r23 = math.sqrt(max(c_best**2 - c_min**2, 0.0)) / 2.0
    for _ in range(16):
        p = center + rot @ (np.array([r1, r23, r23]) * _unit_ball_sample(rng))
        if (p >= lo).all() and (p <= hi).all():
            return p
    return rng.uniform(lo, hi)


def plan_path(
    tree: OccupancyOctree,
    start,
    goal,
    radius: float,
    cfg: PlannerConfig,
    rng: np.random.Generator,
    bounds=None,
    checker: CollisionCache | None = None,
) -> Path | None:
    """Plan a collision-free path from start toward goal; None on failure.

    The tree grows inside the known-free bounding box of the map (inflated
    by the safety radius and clipped to the exploration bounds).  Success
    means some tree node lies within 2 * radius of the goal; the returned
    path ends at the node nearest the goal, is shortcut-simplified and then
    re-verified element by element with the exact checks.
    """
    start = np.asarray(start, dtype=float).reshape(3)
    goal = np.asarray(goal, dtype=float).reshape(3)
    if checker is None or checker.version != tree.version:
        checker = CollisionCache(tree, radius)
    if not collision_free_point(tree, start, radius):
        return None
    if np.linalg.norm(goal - start) <= max(cfg.goal_tolerance, 1e-9):
        return None
    # 2R plus discretisation slack: conservative voxel checks keep nodes a
    # little farther from walls, and frontier goals often sit against them.
    near_tol = 2.0 * radius + 2.0 * tree.resolution

    bbox = tree.observed_bbox()
    if bbox is None:
        return None
    lo = bbox[0] - radius
    hi = bbox[1] + radius
    if bounds is not None:
        bounds = np.asarray(bounds, dtype=float).reshape(2, 3)
        lo = np.maximum(lo, bounds[0])
        hi = np.minimum(hi, bounds[1])
    hi = np.maximum(hi, lo + 1e-6)

    if checker.point_free(goal) and checker.segment_free(start, goal):
        return _finalize(tree, [start, goal], radius, cfg, rng, checker)

    # A safety sphere needs its own voxel free, so a goal whose whole
    # near-tolerance ball holds no known-free voxel can never be reached;
    # reject it without burning the iteration budget.
    if not _goal_region_has_free_voxel(tree, goal, near_tol):
        return None
    # Thin observed-free streaks pass the voxel test but cannot host any
    # safety sphere; probe the ball before growing a doomed tree.
    if not _goal_region_admits_node(checker, goal, near_tol, lo, hi, rng):
        return None

    cap = cfg.max_iterations + 1
    nodes = np.empty((cap, 3))
    nodes[0] = start
    parents = np.full(cap, -1, dtype=np.int64)
    costs = np.zeros(cap)
    children: list[list[int]] = [[] for _ in range(cap)]
    n = 1
    best = -1
    best_d = np.inf
    first_solution: int | None = None
    approach = float(np.linalg.norm(goal - start))
    approach_iter = 0

    rot, c_min = _ellipsoid_frame(start, goal)
    center = (start + goal) / 2.0
    for it in range(cfg.max_iterations):
        if (
            first_solution is not None
            and it - first_solution >= cfg.post_solution_iterations
        ):
            break
        if best < 0 and it - approach_iter >= cfg.stall_iterations:
            return None  # the tree stopped getting closer; goal walled off
        if rng.uniform() < cfg.goal_bias:
            x = goal
        elif best >= 0 and best_d <= cfg.goal_tolerance:
            # Informed focusing only once the goal itself is reached;
            # narrowing onto an approximate endpoint would lock the tree
            # out of detours (doorways) toward the real goal.
            x = _informed_sample(
                rng, center, rot, c_min, costs[best] + best_d, lo, hi
            )
        else:
            x = rng.uniform(lo, hi)

        d2 = ((nodes[:n] - x) ** 2).sum(axis=1)
        nearest = int(np.argmin(d2))
        dist = math.sqrt(d2[nearest])
        if dist < 1e-9:
            continue
        step = min(1.0, cfg.step_size / dist)
        new = nodes[nearest] + (x - nodes[nearest]) * step
        if not checker.point_free(new):
            continue

        dn2 = ((nodes[:n] - new) ** 2).sum(axis=1)
        rad = min(
            cfg.rewire_gamma * (math.log(n + 1) / (n + 1)) ** (1.0 / 3.0),
            2.0 * cfg.step_size,
        )
        nbrs = np.flatnonzero(dn2 <= rad * rad)
        cand = nbrs if nearest in nbrs else np.r_[nbrs, nearest]
        dists = np.sqrt(dn2[cand])
        order = np.argsort(costs[cand] + dists, kind="stable")
        parent = -1
        for k in order:
            c = int(cand[k])
            if checker.segment_free(nodes[c], new):
                parent = c
                new_cost = costs[c] + dists[k]
                break
        if parent < 0:
            continue
        idx = n
        nodes[idx] = new
        parents[idx] = parent
        costs[idx] = new_cost
        children[parent].append(idx)
        n += 1

        for k, c in enumerate(cand):
            c = int(c)
            alt = new_cost + dists[k]
            if alt + 1e-9 < costs[c] and checker.segment_free(new, nodes[c]):
                children[parents[c]].remove(c)
                parents[c] = idx
                children[idx].append(c)
                delta = alt - costs[c]
                stack = [c]
                while stack:
                    node = stack.pop()
                    costs[node] += delta
                    stack.extend(children[node])

        dg = float(np.linalg.norm(new - goal))
        if dg < approach - cfg.step_size / 4.0:
            approach = dg
            approach_iter = it
        if dg <= near_tol:
            if dg < best_d - 1e-12 or (
                abs(dg - best_d) <= 1e-12 and costs[idx] < costs[best]
            ):
                # Re-arm the early-exit window on real progress toward the
                # goal so the tree keeps pushing instead of settling on the
                # first node that merely enters the tolerance ball.
                if best < 0 or best_d - dg > cfg.step_size / 2.0:
                    first_solution = it
                best, best_d = idx, dg

    if best <= 0:
        return None
    chain = []
    node = best
    while node >= 0:
        chain.append(nodes[node])
        node = parents[node]
    chain.reverse()
    return _finalize(tree, chain, radius, cfg, rng, checker)


def _finalize(tree, waypoints, radius, cfg, rng, checker) -> Path | None:
    path = Path(np.asarray(waypoints))
    simplified = simplify_path(
        tree, path, radius, rng, passes=cfg.simplify_passes, checker=checker
    )
    for p in (simplified, path):
        if _verify_path(tree, p, radius):
            return p
    return None


def _verify_path(tree, path: Path, radius: float) -> bool:
    """Dense re-check at quarter-voxel spacing, exactly like the safety
    audit the driver applies to every committed path."""
    wp = path.waypoints
    spacing = tree.resolution / 4.0
    for i in range(len(wp) - 1):
        for s in _segment_samples(wp[i], wp[i + 1], spacing):
            if not collision_free_point(tree, s, radius):
                return False
    return True


def simplify_path(
    tree: OccupancyOctree,
    path: Path,
    radius: float,
    rng: np.random.Generator,
    passes: int = 3,
    checker: CollisionCache | None = None,
) -> Path:
    """Shortcut waypoint subchains through free space; never longer.

    Tries the full start-to-end shortcut first, then random pairs; a
    replacement is kept only when the direct segment passes the collision
    check, so the output stays collision-free.
    """
    if checker is not None and checker.version == tree.version:
        seg_free = checker.segment_free
    else:
        seg_free = lambda a, b: collision_free_segment(tree, a, b, radius)
    wp = [w.copy() for w in path.waypoints]

    def try_shortcut(i: int, j: int) -> bool:
        if j - i < 2:
            return False
        if seg_free(wp[i], wp[j]):
            del wp[i + 1 : j]
            return True
        return False

    for _ in range(passes):
        if len(wp) <= 2:
            break
        try_shortcut(0, len(wp) - 1)
        for _ in range(len(wp)):
            if len(wp) <= 2:
                break
            i = int(rng.integers(len(wp) - 2))
            j = int(rng.integers(i + 2, len(wp)))
            try_shortcut(i, j)
    return Path(np.asarray(wp), yaws=None)
