"""Collision checks and informed RRT* planning over known-free space."""

import math

import numpy as np
import pytest

from mavexplore.octree import OccupancyOctree
from mavexplore.planning import (
    CollisionCache,
    Path,
    PlannerConfig,
    collision_free_point,
    collision_free_segment,
    plan_path,
    simplify_path,
)


def observed_box_map(res=0.1, dim=128, free_lo=(0.5, 0.5, 0.5), free_hi=(7.5, 7.5, 2.5),
                     occupied=()):
    """A map with a fully observed free box, optionally with occupied boxes."""
    tree = OccupancyOctree(res, dim, (0.0, 0.0, 0.0))
    lo = tree.world_to_voxel(np.array(free_lo))
    hi = tree.world_to_voxel(np.array(free_hi) - 1e-9)
    axes = [np.arange(lo[i], hi[i] + 1) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
    dirty = tree.apply_log_odds_batch(grid, np.full(len(grid), -12.0))
    for box in occupied:
        a = tree.world_to_voxel(np.array(box[0]))
        b = tree.world_to_voxel(np.array(box[1]) - 1e-9)
        axes = [np.arange(a[i], b[i] + 1) for i in range(3)]
        g = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 3)
        dirty |= tree.apply_log_odds_batch(g, np.full(len(g), 24.0))
    tree.up_propagate(dirty)
    return tree


class TestPointCheck:
    def test_deep_free_space(self):
        tree = observed_box_map()
        assert collision_free_point(tree, [4.0, 4.0, 1.5], 0.5)

    def test_unknown_within_radius_fails(self):
        tree = observed_box_map()
        # free box ends at 0.5; sphere pokes into unobserved space
        assert not collision_free_point(tree, [0.8, 4.0, 1.5], 0.5)

    def test_occupied_within_radius_fails(self):
        tree = observed_box_map(occupied=[[[4, 4, 0.5], [4.5, 4.5, 2.5]]])
        assert not collision_free_point(tree, [3.6, 4.2, 1.5], 0.5)
        assert collision_free_point(tree, [2.5, 4.2, 1.5], 0.5)


class TestSegmentCheck:
    def test_free_segment(self):
        tree = observed_box_map()
        assert collision_free_segment(tree, [2, 2, 1.5], [6, 6, 1.5], 0.5)

    def test_crossing_wall_fails(self):
        tree = observed_box_map(occupied=[[[4, 0.5, 0.5], [4.4, 7.5, 2.5]]])
        assert not collision_free_segment(tree, [2, 4, 1.5], [6, 4, 1.5], 0.5)

    def test_grazing_unknown_fails(self):
        tree = observed_box_map()
        # segment parallel to the unknown boundary at 0.4 < R distance
        assert not collision_free_segment(tree, [0.9, 2, 1.5], [0.9, 6, 1.5], 0.5)


class TestPlanPath:
    CFG = PlannerConfig(goal_tolerance=0.1, max_iterations=1500)

    def test_straight_shot_in_open_space(self):
        tree = observed_box_map()
        rng = np.random.default_rng(0)
        path = plan_path(tree, [2, 2, 1.5], [6, 6, 1.5], 0.5, self.CFG, rng)
        assert path is not None
        assert len(path.waypoints) == 2  # simplification collapses to a line
        assert np.allclose(path.waypoints[-1], [6, 6, 1.5])
        assert path.length == pytest.approx(math.sqrt(32), rel=1e-9)

    def test_frontier_goal_gets_truncated_endpoint(self):
        tree = observed_box_map()
        rng = np.random.default_rng(1)
        # goal just outside the known-free box: reachable only approximately
        goal = np.array([0.55, 4.0, 1.5])
        path = plan_path(tree, [4, 4, 1.5], goal, 0.5, self.CFG, rng)
        assert path is not None
        end = path.waypoints[-1]
        d = np.linalg.norm(end - goal)
        assert d <= 2 * 0.5 + 2 * tree.resolution  # endpoint contract
        assert d > 1e-6  # short of the goal itself
        assert collision_free_point(tree, end, 0.5)

    def test_sealed_goal_fails(self):
        tree = observed_box_map(
            occupied=[[[3.5, 0.5, 0.5], [3.9, 7.5, 2.5]]]  # full divider
        )
        rng = np.random.default_rng(2)
        cfg = PlannerConfig(goal_tolerance=0.1, max_iterations=400, stall_iterations=200)
        path = plan_path(tree, [2, 4, 1.5], [6.5, 4, 1.5], 0.5, cfg, rng)
        assert path is None

    def test_plans_around_a_wall_with_gap(self):
        tree = observed_box_map(
            occupied=[[[3.8, 0.5, 0.5], [4.2, 5.6, 2.5]]]  # gap at y > 5.6
        )
        rng = np.random.default_rng(3)
        path = plan_path(tree, [2, 2, 1.5], [6, 2, 1.5], 0.5, self.CFG, rng)
        assert path is not None
        assert path.length > 6.0  # the detour is well over the 4 m beeline
        assert np.allclose(path.waypoints[-1], [6, 2, 1.5], atol=0.15)

    def test_every_returned_path_is_densely_safe(self):
        tree = observed_box_map(occupied=[[[3.8, 2.5, 0.5], [4.2, 7.5, 2.5]]])
        rng = np.random.default_rng(4)
        for seed in range(5):
            path = plan_path(
                tree, [2, 4, 1.5], [6, 4.5, 1.5], 0.5, self.CFG,
                np.random.default_rng(seed),
            )
            if path is None:
                continue
            wp = path.waypoints
            spacing = tree.resolution / 4
            for i in range(len(wp) - 1):
                seg = wp[i + 1] - wp[i]
                n = max(1, math.ceil(np.linalg.norm(seg) / spacing))
                for k in range(n + 1):
                    assert collision_free_point(tree, wp[i] + seg * (k / n), 0.5)

    def test_deterministic_under_seed(self):
        tree = observed_box_map(occupied=[[[3.8, 2.5, 0.5], [4.2, 7.5, 2.5]]])
        a = plan_path(tree, [2, 4, 1.5], [6, 4.5, 1.5], 0.5, self.CFG, np.random.default_rng(9))
        b = plan_path(tree, [2, 4, 1.5], [6, 4.5, 1.5], 0.5, self.CFG, np.random.default_rng(9))
        assert (a.waypoints == b.waypoints).all()

    def test_start_in_collision_fails(self):
        tree = observed_box_map()
        rng = np.random.default_rng(5)
        assert plan_path(tree, [0.2, 0.2, 0.2], [6, 6, 1.5], 0.5, self.CFG, rng) is None


class TestSimplify:
    def test_zigzag_straightens(self):
        tree = observed_box_map()
        zig = Path(np.array([[2, 2, 1.5], [3, 4, 1.5], [4, 2, 1.5], [5, 4, 1.5], [6, 2, 1.5]]))
        rng = np.random.default_rng(0)
        out = simplify_path(tree, zig, 0.5, rng)
        assert out.length < zig.length
        assert len(out.waypoints) == 2

    def test_straight_path_is_a_fixpoint(self):
        tree = observed_box_map()
        p = Path(np.array([[2, 2, 1.5], [6, 6, 1.5]]))
        out = simplify_path(tree, p, 0.5, np.random.default_rng(0))
        assert (out.waypoints == p.waypoints).all()

    def test_corner_waypoint_survives(self):
        tree = observed_box_map(occupied=[[[3.8, 0.5, 0.5], [4.2, 6.0, 2.5]]])
        corner = Path(np.array([[2, 2, 1.5], [2.5, 6.8, 1.5], [6, 2.5, 1.5]]))
        out = simplify_path(tree, corner, 0.5, np.random.default_rng(0))
        assert len(out.waypoints) == 3  # the shortcut crosses the wall

    def test_never_longer(self):
        tree = observed_box_map()
        rng = np.random.default_rng(8)
        for _ in range(10):
            pts = rng.uniform([1.5, 1.5, 1.2], [6.5, 6.5, 1.8], size=(6, 3))
            p = Path(pts)
            out = simplify_path(tree, p, 0.5, rng)
            assert out.length <= p.length + 1e-9


class TestPathType:
    def test_needs_two_waypoints(self):
        with pytest.raises(ValueError):
            Path(np.array([[1.0, 2.0, 3.0]]))

    def test_rejects_duplicate_consecutive(self):
        with pytest.raises(ValueError):
            Path(np.array([[1, 2, 3], [1, 2, 3]]))

    def test_length_sums_segments(self):
        p = Path(np.array([[0, 0, 0], [1, 0, 0], [1, 2, 0]]))
        assert p.length == pytest.approx(3.0)

    def test_yaw_count_must_match(self):
        with pytest.raises(ValueError):
            Path(np.array([[0, 0, 0], [1, 0, 0]]), yaws=np.array([0.0]))
