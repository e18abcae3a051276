"""Shared fixtures and small world builders for the test suite."""
from __future__ import annotations

import math

import numpy as np
import pytest

from explore3d.sensor import DepthScan, Pose, SensorSpec, capture
from explore3d.voxel_map import VoxelMap
from explore3d.world import GroundTruthWorld


def box_world(size=(4.0, 4.0, 2.0), boxes=(), resolution=0.2) -> GroundTruthWorld:
    """Sealed world of the given extent with extra axis-aligned boxes (meters)."""
    return GroundTruthWorld(size=tuple(size), resolution=resolution, boxes=list(boxes))


def ray_scan(origin, direction, distance, max_range=5.0) -> DepthScan:
    """Single-ray depth scan; ``distance=math.inf`` means no hit."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return DepthScan(origin=np.asarray(origin, dtype=float), directions=d[None, :],
                     distances=np.array([distance], dtype=float), valid=np.array([True]),
                     max_range=max_range)


def scanned_map(world: GroundTruthWorld, poses, spec: SensorSpec = None):
    """Integrate one capture per pose; returns (map, fov records)."""
    spec = spec or SensorSpec()
    vmap = VoxelMap.from_geometry(world.geometry)
    fovs = []
    for i, pose in enumerate(poses, start=1):
        scan, fov = capture(pose, spec, world, i)
        vmap.integrate_scan(scan, i)
        fovs.append(fov)
    return vmap, fovs


def random_map(rng: np.random.Generator, dims=(8, 8, 6), p=(0.4, 0.45, 0.15), resolution=0.2) -> VoxelMap:
    """Map with independently random voxel states (Unknown, Free, Occupied)."""
    vmap = VoxelMap((0.0, 0.0, 0.0), resolution, dims)
    vmap.states[...] = rng.choice(3, size=dims, p=p)
    return vmap


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def room():
    """Empty sealed 4 x 4 x 2 m room."""
    return box_world()


@pytest.fixture
def spec():
    return SensorSpec()


def yaws(k):
    return [2.0 * math.pi * i / k for i in range(k)]


__all__ = ["box_world", "ray_scan", "scanned_map", "random_map", "yaws", "Pose"]
