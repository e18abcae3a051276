"""Simulated forward-looking depth camera."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .raycast import clip_lengths, traverse
from .voxel_map import Aabb, GridGeometry


def normalize_yaw(yaw: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    y = math.fmod(yaw, 2.0 * math.pi)
    if y <= -math.pi:
        y += 2.0 * math.pi
    elif y > math.pi:
        y -= 2.0 * math.pi
    return y


@dataclass(frozen=True)
class SensorSpec:
    hfov_deg: float = 110.0
    vfov_deg: float = 90.0
    min_range: float = 0.5
    max_range: float = 5.0
    rays_h: Optional[int] = None
    rays_v: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.hfov_deg < 180 or not 0 < self.vfov_deg < 180:
            raise ValueError("field of view must lie in (0, 180) degrees")
        if not 0 <= self.min_range < self.max_range:
            raise ValueError("need 0 <= min_range < max_range")
        for n in (self.rays_h, self.rays_v):
            if n is not None and n < 2:
                raise ValueError("ray counts must be >= 2")

    @property
    def tan_h(self) -> float:
        return math.tan(math.radians(self.hfov_deg) / 2.0)

    @property
    def tan_v(self) -> float:
        return math.tan(math.radians(self.vfov_deg) / 2.0)

    def ray_counts(self, resolution: float) -> tuple[int, int]:
        """One ray per voxel subtended at max range unless set explicitly."""
        nh = self.rays_h or max(2, math.ceil(2 * self.max_range * self.tan_h / resolution) + 1)
        nv = self.rays_v or max(2, math.ceil(2 * self.max_range * self.tan_v / resolution) + 1)
        return nh, nv

    def local_directions(self, resolution: float, stride: int = 1) -> np.ndarray:
        """Unit ray directions in the sensor frame (x forward, y left, z up).

        Pinhole model: rays are uniform in tangent space.
        """
        nh, nv = self.ray_counts(resolution)
        u = np.linspace(-self.tan_h, self.tan_h, nh)[::stride]
        v = np.linspace(-self.tan_v, self.tan_v, nv)[::stride]
        uu, vv = np.meshgrid(u, v, indexing="ij")
        d = np.stack([np.ones(uu.size), uu.ravel(), vv.ravel()], axis=1)
        return d / np.linalg.norm(d, axis=1, keepdims=True)


@dataclass(frozen=True)
class Pose:
    position: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))

    @property
    def p(self) -> np.ndarray:
        return np.array(self.position)


def rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def world_directions(pose: Pose, spec: SensorSpec, resolution: float, stride: int = 1) -> np.ndarray:
    return spec.local_directions(resolution, stride) @ rotation(pose.yaw).T


def frustum_corners(pose: Pose, spec: SensorSpec) -> np.ndarray:
    """Apex plus the four far-plane corners, in world coordinates."""
    r = spec.max_range
    local = np.array([[0.0, 0.0, 0.0]] + [[r, sy * r * spec.tan_h, sz * r * spec.tan_v]
                                          for sy in (-1, 1) for sz in (-1, 1)])
    return pose.p + local @ rotation(pose.yaw).T


def frustum_bounds(pose: Pose, spec: SensorSpec) -> tuple[np.ndarray, np.ndarray]:
    """Metric bounding box of the frustum corners (unpadded, unclipped)."""
    c = frustum_corners(pose, spec)
    return c.min(axis=0), c.max(axis=0)


def frustum_aabb(pose: Pose, spec: SensorSpec, geometry: GridGeometry) -> Optional[Aabb]:
    """Voxel box of the frustum corners padded by one voxel, clipped to the grid."""
    lo, hi = frustum_bounds(pose, spec)
    glo = np.floor(geometry.to_grid(lo)).astype(int) - 1
    ghi = np.floor(geometry.to_grid(hi)).astype(int) + 1
    return Aabb(tuple(int(v) for v in glo), tuple(int(v) for v in ghi)).clip(geometry.dims)


def frustum_region_keys(pose: Pose, spec: SensorSpec, geometry: GridGeometry,
                        box: Optional[Aabb] = None) -> np.ndarray:
    """Keys of voxels whose center lies in the frustum grown by half a voxel diagonal.

    Any voxel pierced by a sensor ray has its center within that margin of
    the ray, so this set contains every voxel a scan can change.
    """
    if box is None:
        box = frustum_aabb(pose, spec, geometry)
    if box is None:
        return np.zeros(0, dtype=np.int64)
    keys = geometry.box_keys(box)
    centers = geometry.centers(geometry.indices(keys))
    local = (centers - pose.p) @ rotation(pose.yaw)
    margin = 0.5 * math.sqrt(3.0) * geometry.resolution
    x, y, z = local[:, 0], local[:, 1], local[:, 2]
    nh = math.sqrt(1.0 + spec.tan_h ** 2)
    nv = math.sqrt(1.0 + spec.tan_v ** 2)
    inside = ((x >= -margin) & (x <= spec.max_range + margin)
              & (np.abs(y) - spec.tan_h * x <= margin * nh)
              & (np.abs(z) - spec.tan_v * x <= margin * nv))
    return keys[inside]


@dataclass
class DepthScan:
    """One capture: per-ray first-hit distances (meters, inf = no hit).

    ``valid`` is False for rays whose hit fell below min range; those rays
    update nothing.
    """

    origin: np.ndarray
    directions: np.ndarray
    distances: np.ndarray
    valid: np.ndarray
    max_range: float


@dataclass
class FovRecord:
    pose: Pose
    spec: SensorSpec
    aabb: Optional[Aabb]
    scan_id: int
    region: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0, dtype=np.int64))


class PoseOutOfBounds(ValueError):
    pass


def capture(pose: Pose, spec: SensorSpec, world, scan_id: int = 0):
    """Cast the sensor rays against the ground-truth world.

    Returns ``(DepthScan, FovRecord)``.
    """
    geo: GridGeometry = world.geometry
    gp = geo.to_grid(pose.p)
    if not all(0 <= v < d for v, d in zip(gp, geo.dims)):
        raise PoseOutOfBounds(f"pose {pose.position} outside world bounds")
    res = geo.resolution
    dirs = world_directions(pose, spec, res)
    n = dirs.shape[0]
    origins = np.broadcast_to(gp, dirs.shape)
    max_len = spec.max_range / res
    lengths = clip_lengths(origins, dirs, np.full(n, max_len), np.array(geo.dims))
    vox, t0, _, valid = traverse(origins, dirs, lengths)
    distances = np.full(n, np.inf)
    if vox.shape[1]:
        inb = valid & np.all((vox >= 0) & (vox < np.array(geo.dims)), axis=2)
        safe = np.where(inb[:, :, None], vox, 0)
        occ = world.occupancy[safe[:, :, 0], safe[:, :, 1], safe[:, :, 2]] & inb
        any_hit = occ.any(axis=1)
        first = np.argmax(occ, axis=1)
        rows = np.nonzero(any_hit)[0]
        distances[rows] = t0[rows, first[rows]] * res
    ok = ~(distances < spec.min_range)
    scan = DepthScan(origin=pose.p.copy(), directions=dirs, distances=distances, valid=ok,
                     max_range=spec.max_range)
    box = frustum_aabb(pose, spec, geo)
    fov = FovRecord(pose=pose, spec=spec, aabb=box, scan_id=scan_id,
                    region=frustum_region_keys(pose, spec, geo, box))
    return scan, fov
