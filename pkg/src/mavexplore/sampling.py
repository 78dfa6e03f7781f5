"""Candidate next-view positions sampled from the frontier block list.

The sorted Morton order of frontier blocks already spreads them spatially,
so taking every ceil(N_rem / N_c)-th block gives a roughly uniform spatial
sample without any clustering step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .integration import FrontierList
from .octree import BLOCK_SIDE, OccupancyOctree
from .types import MavState


@dataclass
class Candidate:
    """A potential goal position; source is the frontier block code, or
    None for the always-included current MAV position."""

    position: np.ndarray
    source: int | None


def filter_frontier_blocks(
    frontiers: FrontierList, tree: OccupancyOctree, min_count: int
) -> list[int]:
    """Sorted sublist of blocks holding at least min_count frontier voxels."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    return [
        code
        for code in frontiers.codes
        if tree.blocks[code].frontier_count >= min_count
    ]


def sample_candidates(
    filtered: list[int],
    tree: OccupancyOctree,
    n_candidates: int,
    state: MavState,
    rng: np.random.Generator,
    random_offset: bool = False,
    frontier_voxels: dict[int, np.ndarray] | None = None,
) -> list[Candidate]:
    """Stride-sample candidate positions from the filtered frontier list.

    One frontier voxel is drawn uniformly (via rng) from every selected
    block and its center becomes a candidate; the current MAV position is
    always appended exactly once.  Stride starts at index 0 unless
    random_offset is set.  frontier_voxels may restrict the draw to a
    per-block subset (flat voxel indices) of the frontier mask.
    """
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    out: list[Candidate] = []
    n_rem = len(filtered)
    if n_rem > 0:
        stride = math.ceil(n_rem / n_candidates)
        start = int(rng.integers(stride)) if random_offset else 0
        for i in range(start, n_rem, stride):
            code = filtered[i]
            blk = tree.blocks[code]
            if frontier_voxels is not None:
                flats = frontier_voxels[code]
            else:
                flats = np.flatnonzero(blk.frontier_mask)
            pick = int(flats[rng.integers(len(flats))])
            local = np.array([pick >> 6, (pick >> 3) & 7, pick & 7])
            voxel = blk.block_coords * BLOCK_SIDE + local
            out.append(Candidate(tree.voxel_center(voxel), code))
    out.append(Candidate(state.position.copy(), None))
    return out
