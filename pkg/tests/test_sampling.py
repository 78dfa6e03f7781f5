"""Frontier block filtering and stride candidate sampling."""

import math

import numpy as np
import pytest

from mavexplore.integration import FrontierList
from mavexplore.octree import OccupancyOctree
from mavexplore.sampling import filter_frontier_blocks, sample_candidates
from mavexplore.types import MavState


def tree_with_frontier_blocks(counts, res=0.2):
    """Build blocks whose frontier masks hold the requested counts."""
    tree = OccupancyOctree(res, 512, (0.0, 0.0, 0.0))
    frontiers = FrontierList()
    rng = np.random.default_rng(0)
    for bi, count in enumerate(counts):
        base = np.array([(bi % 8) * 8, ((bi // 8) % 8) * 8, (bi // 64) * 8])
        flats = rng.permutation(512)[:count]
        coords = base + np.stack([flats >> 6, (flats >> 3) & 7, flats & 7], axis=1)
        # mark observed free and set the frontier flags directly
        dirty = tree.apply_log_odds_batch(coords, np.full(count, -1.0))
        tree.up_propagate(dirty)
        blk = tree.blocks[sorted(dirty)[0]]
        blk.frontier_mask[flats] = True
        blk.frontier_count = int(blk.frontier_mask.sum())
        frontiers.update(blk.code, blk.frontier_count)
    return tree, frontiers


class TestFilter:
    def test_all_pass_when_counts_high(self):
        tree, frontiers = tree_with_frontier_blocks([10, 12, 9])
        assert filter_frontier_blocks(frontiers, tree, 8) == frontiers.codes

    def test_threshold_filters(self):
        tree, frontiers = tree_with_frontier_blocks([3, 20, 5])
        filt = filter_frontier_blocks(frontiers, tree, 8)
        assert len(filt) == 1
        assert tree.blocks[filt[0]].frontier_count == 20

    def test_empty_list_is_empty(self):
        tree, frontiers = tree_with_frontier_blocks([])
        assert filter_frontier_blocks(frontiers, tree, 8) == []

    def test_min_count_validated(self):
        tree, frontiers = tree_with_frontier_blocks([5])
        with pytest.raises(ValueError):
            filter_frontier_blocks(frontiers, tree, 0)


class TestSample:
    def state(self):
        return MavState([1.0, 1.0, 1.0], 0.3)

    def test_stride_arithmetic_forty_over_twenty(self):
        tree, frontiers = tree_with_frontier_blocks([9] * 40, res=0.1)
        filt = filter_frontier_blocks(frontiers, tree, 8)
        out = sample_candidates(filt, tree, 20, self.state(), np.random.default_rng(1))
        block_derived = [c for c in out if c.source is not None]
        assert len(block_derived) == 20  # stride 2 over 40
        picked = [c.source for c in block_derived]
        assert picked == filt[::2]

    def test_stride_one_when_few(self):
        tree, frontiers = tree_with_frontier_blocks([9] * 5, res=0.1)
        filt = filter_frontier_blocks(frontiers, tree, 8)
        out = sample_candidates(filt, tree, 20, self.state(), np.random.default_rng(1))
        assert len([c for c in out if c.source is not None]) == 5
        assert len(out) == 6

    def test_empty_filtered_gives_current_only(self):
        tree, frontiers = tree_with_frontier_blocks([])
        out = sample_candidates([], tree, 20, self.state(), np.random.default_rng(1))
        assert len(out) == 1
        assert out[0].source is None
        assert (out[0].position == self.state().position).all()

    def test_current_position_included_exactly_once(self):
        tree, frontiers = tree_with_frontier_blocks([9] * 7, res=0.1)
        filt = filter_frontier_blocks(frontiers, tree, 3)
        out = sample_candidates(filt, tree, 4, self.state(), np.random.default_rng(2))
        currents = [c for c in out if c.source is None]
        assert len(currents) == 1
        assert len(out) <= 4 + 1

    def test_selected_blocks_equidistant(self):
        tree, frontiers = tree_with_frontier_blocks([9] * 23, res=0.1)
        filt = filter_frontier_blocks(frontiers, tree, 8)
        out = sample_candidates(filt, tree, 6, self.state(), np.random.default_rng(3))
        picked = [c.source for c in out if c.source is not None]
        idx = [filt.index(p) for p in picked]
        stride = math.ceil(23 / 6)
        assert idx == list(range(0, 23, stride))

    def test_candidates_are_frontier_voxel_centers(self):
        tree, frontiers = tree_with_frontier_blocks([9, 14, 30], res=0.2)
        filt = filter_frontier_blocks(frontiers, tree, 8)
        out = sample_candidates(filt, tree, 3, self.state(), np.random.default_rng(4))
        for cand in out:
            if cand.source is None:
                continue
            voxel = tree.world_to_voxel(cand.position)
            assert np.allclose(tree.voxel_center(voxel), cand.position)
            blk = tree.blocks[cand.source]
            flat = int(((voxel[0] & 7) << 6) | ((voxel[1] & 7) << 3) | (voxel[2] & 7))
            assert blk.frontier_mask[flat]

    def test_deterministic_under_seed(self):
        tree, frontiers = tree_with_frontier_blocks([9] * 12, res=0.1)
        filt = filter_frontier_blocks(frontiers, tree, 8)
        a = sample_candidates(filt, tree, 5, self.state(), np.random.default_rng(7))
        b = sample_candidates(filt, tree, 5, self.state(), np.random.default_rng(7))
        assert len(a) == len(b)
        for ca, cb in zip(a, b):
            assert ca.source == cb.source
            assert (ca.position == cb.position).all()

    def test_restricted_voxel_subsets_respected(self):
        tree, frontiers = tree_with_frontier_blocks([20, 20], res=0.2)
        filt = filter_frontier_blocks(frontiers, tree, 8)
        allowed = {
            code: np.flatnonzero(tree.blocks[code].frontier_mask)[:3] for code in filt
        }
        out = sample_candidates(
            filt, tree, 2, self.state(), np.random.default_rng(5), frontier_voxels=allowed
        )
        for cand in out:
            if cand.source is None:
                continue
            voxel = tree.world_to_voxel(cand.position)
            flat = int(((voxel[0] & 7) << 6) | ((voxel[1] & 7) << 3) | (voxel[2] & 7))
            assert flat in allowed[cand.source]
