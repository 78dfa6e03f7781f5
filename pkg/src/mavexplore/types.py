"""Shared dataclasses and small geometry helpers.

Everything here is plain data plus pure functions; instances are safe to
hand between threads as long as callers do not mutate them concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    return a % TWO_PI


def shortest_angle(delta: float) -> float:
    """Shortest signed rotation equivalent to delta, in (-pi, pi]."""
    d = (delta + math.pi) % TWO_PI - math.pi
    return math.pi if d == -math.pi else d


@dataclass
class MavState:
    """MAV flat state: position [x, y, z] in meters and yaw in radians."""

    position: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.yaw = wrap_angle(float(self.yaw))

    def copy(self) -> "MavState":
        return MavState(self.position.copy(), self.yaw)


@dataclass
class MavConfig:
    """Vehicle and sensor limits."""

    v_max: float = 1.5            # m/s
    w_max: float = 0.75           # rad/s
    safety_radius: float = 0.5    # m
    mount_pitch: float = math.radians(-15.0)  # camera pitch, negative = down
    fov_h: float = math.radians(90.0)
    fov_v: float = math.radians(60.0)
    d_max: float = 5.0            # m
    image_width: int = 64
    image_height: int = 48
    depth_noise_sigma: float = 0.0

    def __post_init__(self):
        for name in ("v_max", "w_max", "safety_radius", "d_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.fov_h < math.pi or not 0 < self.fov_v < math.pi:
            raise ValueError("field of view must be in (0, pi)")


@dataclass
class SensorModel:
    """Log-odds increments applied during depth fusion."""

    l_hit: float = 0.85
    l_miss: float = -0.4

    def __post_init__(self):
        if not self.l_hit > 0 > self.l_miss:
            raise ValueError("require l_hit > 0 > l_miss")


@dataclass
class DepthImage:
    """Per-pixel range image; invalid pixels hold +inf."""

    width: int
    height: int
    depths: np.ndarray            # (height, width) ranges in meters
    fov_h: float
    fov_v: float
    d_max: float

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=float).reshape(
            self.height, self.width
        )

    def valid_mask(self) -> np.ndarray:
        d = self.depths
        return np.isfinite(d) & (d > 0.0) & (d <= self.d_max)


def camera_basis(yaw: float, pitch: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(forward, right, up) unit vectors for a yaw+pitch camera, z-up world."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    forward = np.array([cy * cp, sy * cp, sp])
    right = np.array([sy, -cy, 0.0])
    up = np.cross(right, forward)
    return forward, right, up


def camera_ray_directions(
    width: int, height: int, fov_h: float, fov_v: float, yaw: float, pitch: float
) -> np.ndarray:
    """Unit ray directions for every pixel of a pinhole camera, (H*W, 3).

    Pixel (0, 0) is the top-left; rays go through pixel centers, so every
    ray stays strictly inside the [-fov/2, fov/2] frustum on both axes.
    """
    forward, right, up = camera_basis(yaw, pitch)
    th = math.tan(fov_h / 2.0)
    tv = math.tan(fov_v / 2.0)
    u = (2.0 * (np.arange(width) + 0.5) / width - 1.0) * th
    v = (1.0 - 2.0 * (np.arange(height) + 0.5) / height) * tv
    uu, vv = np.meshgrid(u, v)
    dirs = (
        forward[None, :]
        + uu.reshape(-1, 1) * right[None, :]
        + vv.reshape(-1, 1) * up[None, :]
    )
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return dirs
