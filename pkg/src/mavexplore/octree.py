"""Sparse occupancy octree with 8x8x8 voxel-block leaves.

Leaves are Morton-indexed bricks of log-odds occupancy.  Every inner level
caches the maximum occupancy probability of its children (with unobserved
space counted as 0.5), so a node reading below 0.5 guarantees that every
descendant voxel is known free.  Unobserved voxels always read exactly 0.5;
unknown-ness is a flag, never a stored float, so it cannot drift.

Single writer at a time; readers must not overlap a writer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .morton import _spread, encode_coords, decode_codes, morton_encode

# Interleave table for block coordinates (map_dim/8 is always < 2^10 here).
_SPREAD_TABLE = [_spread(i) for i in range(1024)]


def _block_code(x: int, y: int, z: int) -> int:
    # scalar interleave without range checks; block coords are always small
    return _SPREAD_TABLE[x] | (_SPREAD_TABLE[y] << 1) | (_SPREAD_TABLE[z] << 2)

BLOCK_SIDE = 8
BLOCK_VOXELS = BLOCK_SIDE**3

# Clamp wide enough that saturated space carries negligible entropy
# (H(sigmoid(-12)) ~ 8e-5 nats), so view utilities stay driven by unknowns
# rather than by the residual entropy of already-mapped free space.
LOG_ODDS_MIN = -12.0
LOG_ODDS_MAX = 12.0

_SQRT3 = math.sqrt(3.0)


def probability(log_odds):
    """Log-odds to occupancy probability."""
    return 1.0 / (1.0 + np.exp(-np.asarray(log_odds, dtype=float)))


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


@dataclass
class VoxelBlock:
    """One leaf: an 8x8x8 brick addressed by a single Morton code.

    Arrays are flat (512,), x-major: index = (lx << 6) | (ly << 3) | lz.
    """

    code: int
    block_coords: np.ndarray                     # (3,) block grid coords (voxel >> 3)
    occupancy: np.ndarray = field(default=None)  # float32 log-odds
    observed: np.ndarray = field(default=None)   # bool
    frontier_mask: np.ndarray = field(default=None)
    frontier_count: int = 0

    def __post_init__(self):
        if self.occupancy is None:
            self.occupancy = np.zeros(BLOCK_VOXELS, dtype=np.float32)
        if self.observed is None:
            self.observed = np.zeros(BLOCK_VOXELS, dtype=bool)
        if self.frontier_mask is None:
            self.frontier_mask = np.zeros(BLOCK_VOXELS, dtype=bool)

    def max_probability(self) -> float:
        """Max occupancy over the brick, unobserved voxels counting 0.5."""
        if not self.observed.any():
            return 0.5
        top = float(probability(self.occupancy[self.observed].max()))
        if not self.observed.all():
            return max(top, 0.5)
        return top


class OccupancyOctree:
    """Morton-indexed occupancy map over a cubic power-of-two voxel grid."""

    def __init__(self, resolution: float, map_dim: int, origin):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        if map_dim < BLOCK_SIDE or map_dim & (map_dim - 1):
            raise ValueError("map_dim must be a power of two >= 8")
        self.resolution = float(resolution)
        self.map_dim = int(map_dim)
        self.origin = np.asarray(origin, dtype=float).reshape(3)
        # level 0 caches block maxima; level k groups 2^k blocks per side
        self.num_levels = int(math.log2(map_dim // BLOCK_SIDE))
        self._node_max: list[dict[int, float]] = [
            {} for _ in range(self.num_levels + 1)
        ]
        self.blocks: dict[int, VoxelBlock] = {}
        self.observed_count = 0
        self.version = 0
        self.query_nodes_visited = 0
        self._obs_lo: np.ndarray | None = None  # observed-voxel bbox, voxel coords
        self._obs_hi: np.ndarray | None = None

    # -- construction -----------------------------------------------------

    @classmethod
    def from_bounds(cls, bounds, resolution: float, pad_blocks: int = 1):
        """Smallest power-of-two map covering `bounds` plus a block of padding.

        The padding keeps wall hits on the minimum bound faces inside the
        map, so free voxels against those walls see observed neighbours.
        """
        bounds = np.asarray(bounds, dtype=float).reshape(2, 3)
        pad = pad_blocks * BLOCK_SIDE
        size = bounds[1] - bounds[0]
        need = int(np.max(np.ceil(size / resolution))) + 2 * pad
        map_dim = BLOCK_SIDE
        while map_dim < need:
            map_dim *= 2
        origin = bounds[0] - pad * resolution
        return cls(resolution, map_dim, origin)

    # -- coordinates ------------------------------------------------------

    def world_to_voxel(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return np.floor((p - self.origin) / self.resolution).astype(np.int64)

    def voxel_center(self, coords) -> np.ndarray:
        c = np.asarray(coords, dtype=float)
        return self.origin + (c + 0.5) * self.resolution

    def in_bounds(self, coords) -> np.ndarray:
        c = np.asarray(coords)
        return ((c >= 0) & (c < self.map_dim)).all(axis=-1)

    @property
    def extent(self) -> np.ndarray:
        """(2, 3) world AABB covered by the voxel grid."""
        return np.stack(
            [self.origin, self.origin + self.map_dim * self.resolution]
        )

    def observed_bbox(self) -> np.ndarray | None:
        """World AABB of all observed voxels, or None if nothing observed."""
        if self._obs_lo is None:
            return None
        lo = self.origin + self._obs_lo * self.resolution
        hi = self.origin + (self._obs_hi + 1) * self.resolution
        return np.stack([lo, hi])

    # -- reads ------------------------------------------------------------

    def gather(self, coords) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(observed, log_odds, frontier) for (N, 3) voxel coords.

        Out-of-bounds coords read as unobserved (and so as probability 0.5).
        """
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        n = len(coords)
        observed = np.zeros(n, dtype=bool)
        log_odds = np.zeros(n, dtype=np.float32)
        frontier = np.zeros(n, dtype=bool)
        if n == 0:
            return observed, log_odds, frontier
        inb = self.in_bounds(coords)
        if not inb.any():
            return observed, log_odds, frontier
        sel = np.flatnonzero(inb)
        c = coords[sel]
        codes = encode_coords(c >> 3)
        flat = ((c[:, 0] & 7) << 6) | ((c[:, 1] & 7) << 3) | (c[:, 2] & 7)
        order = np.argsort(codes, kind="stable")
        sc = codes[order]
        starts = np.flatnonzero(np.r_[True, sc[1:] != sc[:-1]])
        ends = np.r_[starts[1:], len(sc)]
        for s, e in zip(starts, ends):
            blk = self.blocks.get(int(sc[s]))
            if blk is None:
                continue
            rows = sel[order[s:e]]
            idx = flat[order[s:e]]
            observed[rows] = blk.observed[idx]
            log_odds[rows] = blk.occupancy[idx]
            frontier[rows] = blk.frontier_mask[idx]
        log_odds[~observed] = 0.0
        return observed, log_odds, frontier

    def gather_prob(self, coords) -> np.ndarray:
        """Occupancy probability per voxel; unknown (or OOB) reads 0.5."""
        observed, log_odds, _ = self.gather(coords)
        p = np.full(len(observed), 0.5)
        if observed.any():
            p[observed] = probability(log_odds[observed])
        return p

    def get_occupancy(self, voxel) -> float:
        """Probability of a single voxel; exactly 0.5 while unobserved."""
        v = np.asarray(voxel, dtype=np.int64)
        if not self.in_bounds(v):
            return 0.5
        blk = self.blocks.get(int(encode_coords(v >> 3)))
        if blk is None:
            return 0.5
        idx = int(((v[0] & 7) << 6) | ((v[1] & 7) << 3) | (v[2] & 7))
        if not blk.observed[idx]:
            return 0.5
        return float(probability(blk.occupancy[idx]))

    def is_observed(self, voxel) -> bool:
        v = np.asarray(voxel, dtype=np.int64)
        if not self.in_bounds(v):
            return False
        blk = self.blocks.get(int(encode_coords(v >> 3)))
        if blk is None:
            return False
        idx = int(((v[0] & 7) << 6) | ((v[1] & 7) << 3) | (v[2] & 7))
        return bool(blk.observed[idx])

    # -- writes -----------------------------------------------------------

    def apply_log_odds(self, voxel, delta: float) -> float:
        """Fuse one log-odds increment; marks the voxel observed.

        Does not up-propagate; call :meth:`up_propagate` with the returned
        block made dirty (the batch path does this for whole frames).
        """
        v = np.asarray(voxel, dtype=np.int64).reshape(1, 3)
        self.apply_log_odds_batch(v, np.array([delta]))
        return self.get_occupancy(voxel)

    def apply_log_odds_batch(self, coords, deltas) -> set[int]:
        """Add log-odds deltas (summed per voxel, then clamped once).

        Returns the set of dirty block codes.  Out-of-bounds coords are
        dropped.  Blocks are allocated on demand.
        """
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        deltas = np.asarray(deltas, dtype=np.float32).reshape(-1)
        inb = self.in_bounds(coords)
        if not inb.all():
            coords = coords[inb]
            deltas = deltas[inb]
        dirty: set[int] = set()
        if len(coords) == 0:
            return dirty
        codes = encode_coords(coords >> 3)
        flat = ((coords[:, 0] & 7) << 6) | ((coords[:, 1] & 7) << 3) | (coords[:, 2] & 7)
        order = np.argsort(codes, kind="stable")
        sc = codes[order]
        starts = np.flatnonzero(np.r_[True, sc[1:] != sc[:-1]])
        ends = np.r_[starts[1:], len(sc)]
        for s, e in zip(starts, ends):
            code = int(sc[s])
            rows = order[s:e]
            blk = self.blocks.get(code)
            if blk is None:
                blk = VoxelBlock(code, coords[rows[0]] >> 3)
                self.blocks[code] = blk
            np.add.at(blk.occupancy, flat[rows], deltas[rows])
            np.clip(blk.occupancy, LOG_ODDS_MIN, LOG_ODDS_MAX, out=blk.occupancy)
            before = int(blk.observed.sum())
            blk.observed[flat[rows]] = True
            self.observed_count += int(blk.observed.sum()) - before
            dirty.add(code)
        lo = coords.min(axis=0)
        hi = coords.max(axis=0)
        if self._obs_lo is None:
            self._obs_lo, self._obs_hi = lo, hi
        else:
            self._obs_lo = np.minimum(self._obs_lo, lo)
            self._obs_hi = np.maximum(self._obs_hi, hi)
        return dirty

    def up_propagate(self, dirty_blocks) -> None:
        """Refresh cached max occupancies on every ancestor of a dirty block."""
        self.version += 1
        if not dirty_blocks:
            return
        for code in dirty_blocks:
            self._node_max[0][code] = self.blocks[code].max_probability()
        parents = {c >> 3 for c in dirty_blocks}
        for level in range(1, self.num_levels + 1):
            child_max = self._node_max[level - 1]
            for pc in parents:
                base = pc << 3
                top = 0.0
                missing = False
                for i in range(8):
                    v = child_max.get(base | i)
                    if v is None:
                        missing = True
                    elif v > top:
                        top = v
                if missing and top < 0.5:
                    top = 0.5
                self._node_max[level][pc] = top
            parents = {pc >> 3 for pc in parents}

    # -- hierarchical queries ----------------------------------------------

    def query_free(self, lo, hi, threshold: float) -> bool:
        """True iff every voxel overlapping the world box [lo, hi] has
        probability < threshold.  Unknown space reads 0.5, so for the usual
        0.5 threshold unknown is never free; regions outside the map count
        as unknown as well.  Descends only into nodes whose cached max is
        >= threshold.
        """
        if not 0.0 < threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")
        lo = np.asarray(lo, dtype=float).reshape(3)
        hi = np.asarray(hi, dtype=float).reshape(3)
        a = np.floor((lo - self.origin) / self.resolution).astype(np.int64)
        b = np.ceil((hi - self.origin) / self.resolution).astype(np.int64) - 1
        b = np.maximum(b, a)
        unknown_free = 0.5 < threshold
        if (b < 0).any() or (a >= self.map_dim).any():
            return unknown_free
        if (a < 0).any() or (b >= self.map_dim).any():
            if not unknown_free:
                return False
            a = np.maximum(a, 0)
            b = np.minimum(b, self.map_dim - 1)
        thr_lo = logit(threshold)
        return self._query_rec(
            self.num_levels,
            0,
            (0, 0, 0),
            (int(a[0]), int(a[1]), int(a[2])),
            (int(b[0]), int(b[1]), int(b[2])),
            threshold,
            thr_lo,
        )

    def _query_rec(self, level, code, base, a, b, threshold, thr_lo) -> bool:
        self.query_nodes_visited += 1
        side = BLOCK_SIDE << level
        x0 = base[0] if base[0] > a[0] else a[0]
        y0 = base[1] if base[1] > a[1] else a[1]
        z0 = base[2] if base[2] > a[2] else a[2]
        x1 = min(base[0] + side - 1, b[0])
        y1 = min(base[1] + side - 1, b[1])
        z1 = min(base[2] + side - 1, b[2])
        if x0 > x1 or y0 > y1 or z0 > z1:
            return True
        cached = self._node_max[level].get(code)
        if cached is None:
            return 0.5 < threshold
        if cached < threshold:
            return True
        if level == 0:
            blk = self.blocks[code]
            occ = blk.occupancy.reshape(8, 8, 8)
            obs = blk.observed.reshape(8, 8, 8)
            sx = slice(x0 - base[0], x1 - base[0] + 1)
            sy = slice(y0 - base[1], y1 - base[1] + 1)
            sz = slice(z0 - base[2], z1 - base[2] + 1)
            sub_obs = obs[sx, sy, sz]
            sub_occ = occ[sx, sy, sz]
            if not sub_obs.all() and not 0.5 < threshold:
                return False
            return bool((sub_occ[sub_obs] < thr_lo).all())
        half = side >> 1
        for i in range(8):
            child_base = (
                base[0] + (i & 1) * half,
                base[1] + ((i >> 1) & 1) * half,
                base[2] + ((i >> 2) & 1) * half,
            )
            if not self._query_rec(
                level - 1, (code << 3) | i, child_base, a, b, threshold, thr_lo
            ):
                return False
        return True

    def sphere_free(self, center, radius: float) -> bool:
        """True iff every voxel intersecting the sphere is known free.

        Whole blocks reading below 0.5 are accepted from their cached max;
        mixed blocks fall back to an exact per-voxel cube/sphere test.
        """
        cx, cy, cz = float(center[0]), float(center[1]), float(center[2])
        ox, oy, oz = self.origin
        r = self.resolution
        r2 = radius * radius
        ax = math.floor((cx - radius - ox) / r)
        ay = math.floor((cy - radius - oy) / r)
        az = math.floor((cz - radius - oz) / r)
        bx = math.ceil((cx + radius - ox) / r) - 1
        by = math.ceil((cy + radius - oy) / r) - 1
        bz = math.ceil((cz + radius - oz) / r) - 1
        if (
            ax < 0
            or ay < 0
            or az < 0
            or bx >= self.map_dim
            or by >= self.map_dim
            or bz >= self.map_dim
        ):
            return False  # the sphere reaches unknown space beyond the map
        node0 = self._node_max[0]
        side = BLOCK_SIDE * r
        table = _SPREAD_TABLE
        mixed = []
        for gx in range(ax >> 3, (bx >> 3) + 1):
            blo = ox + gx * side
            dx = blo - cx
            if dx < 0.0:
                dx = cx - blo - side
                if dx < 0.0:
                    dx = 0.0
            cgx = table[gx]
            for gy in range(ay >> 3, (by >> 3) + 1):
                blo = oy + gy * side
                dy = blo - cy
                if dy < 0.0:
                    dy = cy - blo - side
                    if dy < 0.0:
                        dy = 0.0
                cgy = table[gy] << 1
                for gz in range(az >> 3, (bz >> 3) + 1):
                    blo = oz + gz * side
                    dz = blo - cz
                    if dz < 0.0:
                        dz = cz - blo - side
                        if dz < 0.0:
                            dz = 0.0
                    if dx * dx + dy * dy + dz * dz > r2:
                        continue  # block does not touch the sphere
                    code = cgx | cgy | (table[gz] << 2)
                    cached = node0.get(code)
                    if cached is None:
                        return False  # wholly unobserved block touches it
                    if cached >= 0.5:
                        mixed.append((code, gx, gy, gz))
        if not mixed:
            return True
        # per-axis cube distances for the whole AABB, sliced per block below
        exs = ox + np.arange(ax, bx + 1) * r
        eys = oy + np.arange(ay, by + 1) * r
        ezs = oz + np.arange(az, bz + 1) * r
        ddx = np.maximum(np.maximum(exs - cx, cx - exs - r), 0.0) ** 2
        ddy = np.maximum(np.maximum(eys - cy, cy - eys - r), 0.0) ** 2
        ddz = np.maximum(np.maximum(ezs - cz, cz - ezs - r), 0.0) ** 2
        for code, gx, gy, gz in mixed:
            blk = self.blocks[code]
            x0 = max(ax, gx * 8)
            x1 = min(bx, gx * 8 + 7)
            y0 = max(ay, gy * 8)
            y1 = min(by, gy * 8 + 7)
            z0 = max(az, gz * 8)
            z1 = min(bz, gz * 8 + 7)
            obs = blk.observed.reshape(8, 8, 8)[
                x0 - gx * 8 : x1 - gx * 8 + 1,
                y0 - gy * 8 : y1 - gy * 8 + 1,
                z0 - gz * 8 : z1 - gz * 8 + 1,
            ]
            occ = blk.occupancy.reshape(8, 8, 8)[
                x0 - gx * 8 : x1 - gx * 8 + 1,
                y0 - gy * 8 : y1 - gy * 8 + 1,
                z0 - gz * 8 : z1 - gz * 8 + 1,
            ]
            d2 = (
                ddx[x0 - ax : x1 - ax + 1, None, None]
                + ddy[None, y0 - ay : y1 - ay + 1, None]
                + ddz[None, None, z0 - az : z1 - az + 1]
            )
            bad = (d2 <= r2) & (~obs | (occ >= 0.0))
            if bad.any():
                return False
        return True

    # -- export -----------------------------------------------------------

    def export_observed(self, path) -> None:
        """Write `x y z p` per observed voxel (centers, 6 decimals), in
        Morton order so the file is stable for a given map state."""
        r = self.resolution
        with open(path, "w") as fh:
            for code in sorted(self.blocks):
                blk = self.blocks[code]
                idx = np.flatnonzero(blk.observed)
                if len(idx) == 0:
                    continue
                local = np.stack([idx >> 6, (idx >> 3) & 7, idx & 7], axis=1)
                coords = blk.block_coords * BLOCK_SIDE + local
                centers = self.origin + (coords + 0.5) * r
                probs = probability(blk.occupancy[idx])
                for (x, y, z), p in zip(centers, probs):
                    fh.write(f"{x:.6f} {y:.6f} {z:.6f} {p:.6f}\n")
