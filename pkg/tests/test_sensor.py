"""Simulated depth camera: ray bundles, first-hit distances and FOV records."""
from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import box_world
from explore3d.oracles import dda_voxels
from explore3d.sensor import (Pose, PoseOutOfBounds, SensorSpec, capture, frustum_aabb, frustum_bounds,
                              normalize_yaw)
from explore3d.voxel_map import GridGeometry, VoxelMap


class TestSpec:
    @pytest.mark.parametrize("kw", [dict(hfov_deg=0), dict(hfov_deg=180), dict(vfov_deg=-1),
                                    dict(min_range=5.0, max_range=5.0), dict(min_range=-1),
                                    dict(rays_h=1)])
    def test_invalid_specs_rejected(self, kw):
        with pytest.raises(ValueError):
            SensorSpec(**kw)

    def test_default_ray_counts_cover_one_voxel_at_max_range(self):
        spec = SensorSpec()
        nh, nv = spec.ray_counts(0.2)
        width = 2 * spec.max_range * spec.tan_h
        assert width / (nh - 1) <= 0.2
        assert 2 * spec.max_range * spec.tan_v / (nv - 1) <= 0.2

    def test_directions_are_unit_and_inside_frustum(self):
        spec = SensorSpec()
        d = spec.local_directions(0.2)
        assert np.allclose(np.linalg.norm(d, axis=1), 1.0)
        assert np.all(np.abs(d[:, 1] / d[:, 0]) <= spec.tan_h + 1e-12)
        assert np.all(np.abs(d[:, 2] / d[:, 0]) <= spec.tan_v + 1e-12)

    @pytest.mark.parametrize("yaw,expected", [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi),
                                              (3 * math.pi, math.pi), (2.5 * math.pi, 0.5 * math.pi)])
    def test_yaw_normalized_to_half_open_interval(self, yaw, expected):
        assert normalize_yaw(yaw) == pytest.approx(expected)
        assert -math.pi < Pose((0, 0, 0), yaw).yaw <= math.pi


class TestCapture:
    def test_planar_wall_two_meters_ahead(self):
        world = box_world((8.0, 20.0, 20.0), [(3.0, 0.0, 0.0, 3.4, 20.0, 20.0)])
        spec = SensorSpec()
        scan, _ = capture(Pose((1.0, 10.1, 10.1), 0.0), spec, world)
        central = np.abs(scan.directions[:, 1]) + np.abs(scan.directions[:, 2]) < 1e-9
        assert central.sum() == 1
        assert scan.distances[central][0] == pytest.approx(2.0, abs=1e-9)
        # every ray hits the wall plane x = 3.0 at 2 / cos(angle) meters
        expected = 2.0 / scan.directions[:, 0]
        finite = np.isfinite(scan.distances)
        assert finite.all()
        assert np.all(scan.distances <= expected + 1e-9)
        assert np.all(scan.distances >= expected - world.resolution * math.sqrt(3) - 1e-9)

    def test_empty_world_reports_no_hits_and_frees_frustum(self):
        world = box_world((12.0, 12.0, 12.0), resolution=0.4)
        spec = SensorSpec()
        pose = Pose((1.0, 6.0, 6.0), 0.0)
        scan, fov = capture(pose, spec, world, 1)
        assert np.all(np.isinf(scan.distances))
        vmap = VoxelMap.from_geometry(world.geometry)
        vmap.integrate_scan(scan, 1)
        free = np.argwhere(vmap.states == 1)
        local = world.geometry.centers(free) - pose.p
        assert np.all(local[:, 0] > -world.resolution)
        assert np.all(np.linalg.norm(local, axis=1) <= spec.max_range + world.resolution)

    def test_pose_outside_world_rejected(self, room, spec):
        with pytest.raises(PoseOutOfBounds):
            capture(Pose((-1.0, 1.0, 1.0), 0.0), spec, room)

    def test_deterministic(self, spec):
        world = box_world((6.0, 6.0, 3.0), [(3.0, 2.0, 0.0, 3.6, 4.0, 2.0)])
        a, fa = capture(Pose((1.0, 3.0, 1.5), 0.2), spec, world, 1)
        b, fb = capture(Pose((1.0, 3.0, 1.5), 0.2), spec, world, 1)
        assert a.distances.tobytes() == b.distances.tobytes()
        assert a.directions.tobytes() == b.directions.tobytes()
        assert fa.aabb == fb.aabb and np.array_equal(fa.region, fb.region)

    def test_rays_below_min_range_are_invalid(self, spec):
        world = box_world((6.0, 6.0, 3.0), [(1.2, 0.0, 0.0, 1.6, 6.0, 3.0)])
        scan, _ = capture(Pose((1.0, 3.0, 1.5), 0.0), spec, world)
        assert not scan.valid[np.isfinite(scan.distances) & (scan.distances < spec.min_range)].any()
        assert (~scan.valid).any()

    def test_first_hit_matches_cell_walk(self):
        """No ray reports a hit beyond an occupied cell it passes first."""
        world = box_world((6.0, 6.0, 3.0), [(2.5, 1.0, 0.0, 3.0, 3.0, 2.0), (4.0, 3.5, 0.5, 4.6, 5.0, 3.0)])
        spec = SensorSpec(rays_h=21, rays_v=15)
        geo = world.geometry
        pose = Pose((1.0, 2.7, 1.3), 0.4)
        scan, _ = capture(pose, spec, world)
        o = geo.to_grid(pose.p)
        for d, dist in zip(scan.directions, scan.distances):
            cells = [c for c in dda_voxels(o, d, spec.max_range / geo.resolution) if geo.in_bounds(c)]
            t = 0.0
            first = math.inf
            # walk again with entry distances to find the first occupied cell
            for c in cells:
                if world.occupancy[c]:
                    lo = np.array(c, dtype=float)
                    tmin = max(((lo[a] + (d[a] < 0)) - o[a]) / d[a] for a in range(3) if d[a] != 0)
                    first = max(tmin, t) * geo.resolution
                    break
            if math.isinf(first):
                assert math.isinf(dist)
            else:
                assert dist == pytest.approx(first, abs=1e-9)

    def test_fov_box_contains_changed_voxels(self, spec):
        world = box_world((8.0, 8.0, 3.0), [(3.0, 3.0, 0.0, 4.0, 4.0, 3.0), (6.0, 1.0, 0.0, 6.4, 5.0, 2.0)])
        geo = world.geometry
        rng = np.random.default_rng(11)
        done = 0
        while done < 100:
            p = rng.uniform([0.3, 0.3, 0.3], [7.7, 7.7, 2.7])
            if not world.is_free(p):
                continue
            pose = Pose(tuple(p), rng.uniform(-math.pi, math.pi))
            vmap = VoxelMap.from_geometry(geo)
            scan, fov = capture(pose, spec, world, 1)
            vmap.integrate_scan(scan, 1)
            changed = vmap.changes_since(0)[0]
            assert np.all(fov.aabb.contains_many(geo.indices(changed)))
            assert np.all(np.isin(changed, fov.region))
            done += 1


class TestFrustumBox:
    def test_corner_geometry(self):
        spec = SensorSpec(90.0, 90.0, 0.0, 4.0)
        lo, hi = frustum_bounds(Pose((0.0, 0.0, 0.0), 0.0), spec)
        assert np.allclose(lo, [0.0, -4.0, -4.0])
        assert np.allclose(hi, [4.0, 4.0, 4.0])

    def test_voxel_box_is_padded_and_clipped(self):
        spec = SensorSpec(90.0, 90.0, 0.0, 4.0)
        geo = GridGeometry((0.0, 0.0, 0.0), 1.0, (30, 30, 30))
        box = frustum_aabb(Pose((10.5, 10.5, 10.5), 0.0), spec, geo)
        assert box.lo == (9, 5, 5) and box.hi == (15, 15, 15)
        small = GridGeometry((0.0, 0.0, 0.0), 1.0, (12, 12, 12))
        clipped = frustum_aabb(Pose((10.5, 10.5, 10.5), 0.0), spec, small)
        assert clipped.hi == (11, 11, 11)

    def test_half_turn_reflects_through_apex(self):
        spec = SensorSpec(100.0, 60.0, 0.5, 4.0)
        apex = np.array([3.0, -2.0, 1.0])
        lo0, hi0 = frustum_bounds(Pose(tuple(apex), 0.3), spec)
        lo1, hi1 = frustum_bounds(Pose(tuple(apex), 0.3 + math.pi), spec)
        assert np.allclose(lo1[:2], 2 * apex[:2] - hi0[:2])
        assert np.allclose(hi1[:2], 2 * apex[:2] - lo0[:2])
        assert np.allclose([lo1[2], hi1[2]], [lo0[2], hi0[2]])
