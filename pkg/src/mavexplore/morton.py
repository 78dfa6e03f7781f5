"""63-bit Morton (z-order) codes for 3D grid indexing.

Bit convention: bit i of x lands at output bit 3i, y at 3i+1, z at 3i+2.
Sorting codes ascending traverses the grid along the z-order curve, so the
eight children of any octant occupy a contiguous code range.
"""

from __future__ import annotations

import numpy as np

COORD_BITS = 21
COORD_LIMIT = 1 << COORD_BITS

_MASKS = (
    0x1FFFFF,
    0x1F00000000FFFF,
    0x1F0000FF0000FF,
    0x100F00F00F00F00F,
    0x10C30C30C30C30C3,
    0x1249249249249249,
)


def _spread(n: int) -> int:
    n &= _MASKS[0]
    n = (n | (n << 32)) & _MASKS[1]
    n = (n | (n << 16)) & _MASKS[2]
    n = (n | (n << 8)) & _MASKS[3]
    n = (n | (n << 4)) & _MASKS[4]
    n = (n | (n << 2)) & _MASKS[5]
    return n


def _compact(n: int) -> int:
    n &= _MASKS[5]
    n = (n ^ (n >> 2)) & _MASKS[4]
    n = (n ^ (n >> 4)) & _MASKS[3]
    n = (n ^ (n >> 8)) & _MASKS[2]
    n = (n ^ (n >> 16)) & _MASKS[1]
    n = (n ^ (n >> 32)) & _MASKS[0]
    return n


def morton_encode(x: int, y: int, z: int) -> int:
    """Interleave three 21-bit coordinates into one 63-bit code."""
    for c in (x, y, z):
        if not 0 <= c < COORD_LIMIT:
            raise ValueError(f"coordinate {c} outside [0, 2^21)")
    return _spread(x) | (_spread(y) << 1) | (_spread(z) << 2)


def morton_decode(code: int) -> tuple[int, int, int]:
    """Inverse of :func:`morton_encode`."""
    if not 0 <= code < (1 << 63):
        raise ValueError(f"code {code} outside [0, 2^63)")
    return _compact(code), _compact(code >> 1), _compact(code >> 2)


# Vectorised variants.  int64 is safe: the top interleaved bit is bit 62.

_VM = [np.int64(m) for m in _MASKS]


def _spread_array(n: np.ndarray) -> np.ndarray:
    n = n & _VM[0]
    n = (n | (n << 32)) & _VM[1]
    n = (n | (n << 16)) & _VM[2]
    n = (n | (n << 8)) & _VM[3]
    n = (n | (n << 4)) & _VM[4]
    n = (n | (n << 2)) & _VM[5]
    return n


def _compact_array(n: np.ndarray) -> np.ndarray:
    n = n & _VM[5]
    n = (n ^ (n >> 2)) & _VM[4]
    n = (n ^ (n >> 4)) & _VM[3]
    n = (n ^ (n >> 8)) & _VM[2]
    n = (n ^ (n >> 16)) & _VM[1]
    n = (n ^ (n >> 32)) & _VM[0]
    return n


def encode_coords(coords: np.ndarray) -> np.ndarray:
    """Morton codes for an (N, 3) array of non-negative integer coords."""
    c = np.asarray(coords, dtype=np.int64)
    return (
        _spread_array(c[..., 0])
        | (_spread_array(c[..., 1]) << 1)
        | (_spread_array(c[..., 2]) << 2)
    )


def decode_codes(codes: np.ndarray) -> np.ndarray:
    """(N,) codes back to (N, 3) integer coords."""
    c = np.asarray(codes, dtype=np.int64)
    return np.stack(
        [_compact_array(c), _compact_array(c >> 1), _compact_array(c >> 2)], axis=-1
    )
