"""Depth fusion and incremental frontier maintenance."""

import math

import numpy as np
import pytest

from mavexplore.integration import (
    FrontierList,
    explored_volume,
    integrate_depth,
    is_frontier,
    update_frontiers,
)
from mavexplore.octree import OccupancyOctree
from mavexplore.types import DepthImage, MavConfig, MavState, SensorModel
from mavexplore.world import WorldModel, render_depth


def fresh(res=0.1, bounds=((0, 0, 0), (4, 4, 2.4))):
    tree = OccupancyOctree.from_bounds(np.array(bounds), res)
    return tree, FrontierList(), SensorModel()


def single_ray_image(depth, d_max=5.0):
    return DepthImage(1, 1, np.array([[depth]]), math.radians(1), math.radians(1), d_max)


def march_oracle(tree, origin, direction, t_end, step_frac=0.05):
    """Independent enumeration of the voxels a ray passes through."""
    out = []
    seen = set()
    r = tree.resolution
    t = 0.0
    while t < t_end:
        v = tuple(tree.world_to_voxel(origin + direction * t))
        if v not in seen:
            seen.add(v)
            out.append(v)
        t += r * step_frac
    return out


def full_scan_frontiers(tree):
    """Brute-force frontier oracle over every observed voxel in the map."""
    flagged = set()
    for code, blk in tree.blocks.items():
        idx = np.flatnonzero(blk.observed)
        local = np.stack([idx >> 6, (idx >> 3) & 7, idx & 7], axis=1)
        for voxel in blk.block_coords * 8 + local:
            if is_frontier(tree, voxel):
                flagged.add(tuple(voxel))
    return flagged


def stored_frontiers(tree):
    flagged = set()
    for code, blk in tree.blocks.items():
        idx = np.flatnonzero(blk.frontier_mask)
        local = np.stack([idx >> 6, (idx >> 3) & 7, idx & 7], axis=1)
        for voxel in blk.block_coords * 8 + local:
            flagged.add(tuple(voxel))
    return flagged


class TestIntegrateDepth:
    def test_single_ray_marks_hit_and_misses(self):
        tree, frontiers, model = fresh()
        state = MavState([0.55, 2.0, 1.2], 0.0)
        updated = integrate_depth(tree, state, single_ray_image(2.0), model)
        hit = tree.world_to_voxel(state.position + [2.0 + 1e-5, 0, 0])
        assert tree.get_occupancy(hit) > 0.5
        traversed = march_oracle(tree, state.position, np.array([1.0, 0, 0]), 2.0 - 1e-6)
        for v in traversed:
            if tuple(v) != tuple(hit):
                assert tree.get_occupancy(v) < 0.5, v
        # ~19-21 free voxels over the 2 m at r=0.1
        assert 18 <= len(traversed) - 1 <= 21
        assert len(updated) == len(traversed) or len(updated) == len(traversed) + 1

    def test_invalid_pixels_clear_to_max_range(self):
        tree, frontiers, model = fresh(bounds=((0, 0, 0), (8, 8, 4)))
        state = MavState([1.0, 4.0, 2.0], 0.0)
        img = DepthImage(3, 3, np.full((3, 3), np.inf), math.radians(40), math.radians(30), 3.0)
        integrate_depth(tree, state, img, model)
        probe = tree.world_to_voxel(state.position + [2.9, 0, 0])
        assert tree.is_observed(probe)
        assert tree.get_occupancy(probe) < 0.5
        beyond = tree.world_to_voxel(state.position + [3.2, 0, 0])
        assert not tree.is_observed(beyond)

    def test_empty_image_is_a_no_op(self):
        tree, frontiers, model = fresh()
        state = MavState([2.0, 2.0, 1.2], 0.0)
        updated = integrate_depth(
            tree, state, DepthImage(0, 0, np.zeros((0, 0)), 1.0, 1.0, 5.0), model
        )
        assert len(updated) == 0
        assert tree.observed_count == 0

    def test_up_propagation_ran(self):
        tree, frontiers, model = fresh()
        state = MavState([0.55, 2.0, 1.2], 0.0)
        integrate_depth(tree, state, single_ray_image(2.0), model)
        from tests.test_octree import recompute_node_max

        oracle = recompute_node_max(tree)
        for lvl in range(tree.num_levels + 1):
            assert oracle[lvl] == tree._node_max[lvl]


class TestIsFrontier:
    def test_free_with_unknown_neighbour(self):
        tree, _, _ = fresh()
        tree.apply_log_odds([10, 10, 10], -1.0)
        for n in ([11, 10, 10], [9, 10, 10], [10, 11, 10], [10, 9, 10], [10, 10, 9]):
            tree.apply_log_odds(n, -1.0)
        # [10, 10, 11] left unobserved
        assert is_frontier(tree, [10, 10, 10])

    def test_occupied_is_never_frontier(self):
        tree, _, _ = fresh()
        tree.apply_log_odds([10, 10, 10], 2.0)
        assert not is_frontier(tree, [10, 10, 10])

    def test_exactly_half_observed_is_not_frontier(self):
        tree, _, _ = fresh()
        tree.apply_log_odds([10, 10, 10], 0.0)  # observed, reads exactly 0.5
        assert not is_frontier(tree, [10, 10, 10])

    def test_all_neighbours_observed_clears_frontier(self):
        tree, _, _ = fresh()
        tree.apply_log_odds([10, 10, 10], -1.0)
        for d in ([1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]):
            tree.apply_log_odds(np.array([10, 10, 10]) + d, -1.0)
        assert not is_frontier(tree, [10, 10, 10])

    def test_map_edge_counts_as_unknown(self):
        tree, _, _ = fresh()
        tree.apply_log_odds([0, 10, 10], -1.0)
        assert is_frontier(tree, [0, 10, 10])  # neighbour x=-1 is off-map


class TestUpdateFrontiers:
    def world(self):
        return WorldModel([[0, 0, 0], [4, 4, 2.4]], [[[2.4, 1.6, 0.0], [3.2, 2.4, 2.4]]])

    def cfg(self):
        return MavConfig(image_width=24, image_height=18, d_max=5.0, mount_pitch=0.0)

    def test_incremental_matches_full_scan(self):
        tree, frontiers, model = fresh(res=0.2)
        world, cfg = self.world(), self.cfg()
        rng = np.random.default_rng(4)
        for k in range(6):
            pos = rng.uniform([0.6, 0.6, 0.6], [2.0, 3.4, 1.8])
            state = MavState(pos, rng.uniform(0, 2 * math.pi))
            updated = integrate_depth(tree, state, render_depth(world, state, cfg), model)
            update_frontiers(tree, frontiers, updated)
            assert stored_frontiers(tree) == full_scan_frontiers(tree)

    def test_list_membership_tracks_counts(self):
        tree, frontiers, model = fresh(res=0.2)
        world, cfg = self.world(), self.cfg()
        state = MavState([1.0, 2.0, 1.2], 0.0)
        updated = integrate_depth(tree, state, render_depth(world, state, cfg), model)
        update_frontiers(tree, frontiers, updated)
        assert len(frontiers) > 0
        for code in frontiers:
            assert tree.blocks[code].frontier_count >= 1
        for code, blk in tree.blocks.items():
            assert (blk.frontier_count >= 1) == (code in frontiers)
            assert blk.frontier_count == int(blk.frontier_mask.sum())

    def test_codes_sorted_without_duplicates(self):
        tree, frontiers, model = fresh(res=0.2)
        world, cfg = self.world(), self.cfg()
        for yaw in (0.0, 2.0, 4.0):
            state = MavState([1.0, 2.0, 1.2], yaw)
            updated = integrate_depth(tree, state, render_depth(world, state, cfg), model)
            update_frontiers(tree, frontiers, updated)
        codes = frontiers.codes
        assert codes == sorted(codes)
        assert len(codes) == len(set(codes))

    def test_second_view_removes_resolved_frontiers(self):
        tree, frontiers, model = fresh(res=0.2, bounds=((0, 0, 0), (8, 4, 2.4)))
        world = WorldModel([[0, 0, 0], [8, 4, 2.4]], [])
        cfg = MavConfig(image_width=32, image_height=24, d_max=3.0, mount_pitch=0.0)
        state = MavState([0.7, 2.0, 1.2], 0.0)
        updated = integrate_depth(tree, state, render_depth(world, state, cfg), model)
        update_frontiers(tree, frontiers, updated)
        before = stored_frontiers(tree)
        # frontier voxels near max range should resolve after a closer look
        state2 = MavState([2.2, 2.0, 1.2], 0.0)
        updated = integrate_depth(tree, state2, render_depth(world, state2, cfg), model)
        update_frontiers(tree, frontiers, updated)
        after = stored_frontiers(tree)
        assert before - after, "some previously flagged voxels must resolve"
        assert after == full_scan_frontiers(tree)

    def test_rescan_of_known_space_changes_nothing(self):
        tree, frontiers, model = fresh(res=0.2)
        world, cfg = self.world(), self.cfg()
        state = MavState([1.0, 2.0, 1.2], 0.0)
        updated = integrate_depth(tree, state, render_depth(world, state, cfg), model)
        update_frontiers(tree, frontiers, updated)
        before = stored_frontiers(tree)
        updated = integrate_depth(tree, state, render_depth(world, state, cfg), model)
        update_frontiers(tree, frontiers, updated)
        assert stored_frontiers(tree) == before

    def test_untouched_voxels_keep_their_flags(self):
        tree, frontiers, model = fresh(res=0.2)
        world, cfg = self.world(), self.cfg()
        state = MavState([1.0, 2.0, 1.2], 0.0)
        updated = integrate_depth(tree, state, render_depth(world, state, cfg), model)
        update_frontiers(tree, frontiers, updated)
        flags_before = {
            (code, i): bool(blk.frontier_mask[i])
            for code, blk in tree.blocks.items()
            for i in range(512)
        }
        state2 = MavState([1.0, 2.0, 1.2], math.pi)  # look the other way
        updated = integrate_depth(tree, state2, render_depth(world, state2, cfg), model)
        touched = {tuple(v) for v in updated}
        for d in np.array([[1,0,0],[-1,0,0],[0,1,0],[0,-1,0],[0,0,1],[0,0,-1]]):
            touched |= {tuple(v + d) for v in updated}
        update_frontiers(tree, frontiers, updated)
        for (code, i), was in flags_before.items():
            blk = tree.blocks[code]
            voxel = tuple(blk.block_coords * 8 + np.array([i >> 6, (i >> 3) & 7, i & 7]))
            if voxel not in touched:
                assert bool(blk.frontier_mask[i]) == was


class TestExploredVolume:
    def test_fresh_map_is_zero(self):
        tree, _, _ = fresh()
        assert explored_volume(tree) == 0.0

    def test_single_voxel(self):
        tree, _, _ = fresh(res=0.1)
        tree.apply_log_odds([5, 5, 5], -0.4)
        assert explored_volume(tree) == pytest.approx(0.001)

    def test_matches_exhaustive_sweep_and_monotone(self):
        tree, frontiers, model = fresh(res=0.2)
        world = WorldModel([[0, 0, 0], [4, 4, 2.4]], [])
        cfg = MavConfig(image_width=24, image_height=18, d_max=4.0, mount_pitch=0.0)
        last = 0.0
        for yaw in (0.0, 1.5, 3.0, 4.5):
            state = MavState([2.0, 2.0, 1.2], yaw)
            updated = integrate_depth(tree, state, render_depth(world, state, cfg), model)
            update_frontiers(tree, frontiers, updated)
            vol = explored_volume(tree)
            sweep = sum(int(blk.observed.sum()) for blk in tree.blocks.values())
            assert vol == pytest.approx(sweep * 0.2 ** 3)
            assert vol >= last
            last = vol
