"""Roadmap construction, segment checking, candidates, pruning and shortest paths."""
from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import box_world
from explore3d.frontier import FrontierStore, detect
from explore3d.oracles import brute_force_shortest, union_find_groups
from explore3d.roadmap import (RoadMap, RoadmapParams, SamplingRegion, assign_candidates,
                               check_invariants, determine_regions, extend, prune, region_bounds,
                               segment_free, segment_state, segment_states, shortest_path,
                               sukharev_samples, touched_voxels)
from explore3d.sensor import FovRecord, Pose, SensorSpec, capture
from explore3d.voxel_map import FREE, OCCUPIED, UNKNOWN, Aabb, GridGeometry, VoxelMap


def free_map(dims=(20, 20, 10), res=0.2) -> VoxelMap:
    vmap = VoxelMap((0.0, 0.0, 0.0), res, dims)
    vmap.states[...] = FREE
    return vmap


def fov_at(box: Aabb, scan_id: int) -> FovRecord:
    return FovRecord(pose=Pose((0.0, 0.0, 0.0)), spec=SensorSpec(), aabb=box, scan_id=scan_id)


def frontier_at(store: FrontierStore, cells):
    return store.add(store.geometry.keys(np.array(cells)))


def segment_box_hits(a, b, lo, hi) -> bool:
    """Slab test: does the closed segment a->b meet the closed box [lo, hi]?"""
    t0, t1 = 0.0, 1.0
    for k in range(3):
        d = b[k] - a[k]
        if d == 0.0:
            if a[k] < lo[k] or a[k] > hi[k]:
                return False
            continue
        u0, u1 = (lo[k] - a[k]) / d, (hi[k] - a[k]) / d
        if u0 > u1:
            u0, u1 = u1, u0
        t0, t1 = max(t0, u0), min(t1, u1)
        if t0 > t1:
            return False
    return True


class TestSegmentChecking:
    def test_touched_voxels_equal_slab_oracle(self):
        rng = np.random.default_rng(2)
        geo = GridGeometry((0.0, 0.0, 0.0), 1.0, (12, 12, 12))
        for _ in range(400):
            a = rng.uniform(2, 9, 3)
            b = a + rng.normal(size=3) * 1.5
            if rng.random() < 0.5:  # endpoints on grid planes, edges and corners
                a, b = np.round(a * 2) / 2, np.round(b * 2) / 2
            lo = np.floor(np.minimum(a, b)).astype(int) - 1
            hi = np.floor(np.maximum(a, b)).astype(int) + 1
            expected = {c for c in itertools.product(*(range(lo[k], hi[k] + 1) for k in range(3)))
                        if segment_box_hits(a, b, np.array(c, float), np.array(c, float) + 1)}
            got = {tuple(int(v) for v in c) for c in touched_voxels(geo, a, b)}
            assert got == expected

    def test_batched_equals_scalar(self):
        rng = np.random.default_rng(4)
        vmap = VoxelMap((0.0, 0.0, 0.0), 0.2, (20, 20, 10))
        vmap.states[...] = rng.choice(3, size=vmap.dims, p=[0.02, 0.96, 0.02])
        a = rng.uniform(0.3, 3.7, (3000, 3)) * [1, 1, 0.5]
        b = a + rng.normal(size=(3000, 3)) * 0.7
        snap = rng.random(3000) < 0.4
        a[snap], b[snap] = np.round(a[snap] * 5) / 5, np.round(b[snap] * 5) / 5
        flat = rng.random(3000) < 0.2
        b[flat, 2] = a[flat, 2]
        got = segment_states(vmap, a, b)
        expected = [segment_state(vmap, p, q) for p, q in zip(a, b)]
        assert got.tolist() == expected

    def test_unknown_and_outside_block(self):
        vmap = free_map()
        assert segment_free(vmap, (0.5, 0.5, 0.5), (3.5, 0.5, 0.5))
        vmap.states[10, 2, 2] = UNKNOWN
        assert segment_state(vmap, (0.5, 0.5, 0.5), (3.5, 0.5, 0.5)) == UNKNOWN
        vmap.states[5, 2, 2] = OCCUPIED
        assert segment_state(vmap, (0.5, 0.5, 0.5), (3.5, 0.5, 0.5)) == OCCUPIED
        assert segment_state(vmap, (0.5, 0.5, 0.5), (-0.5, 0.5, 0.5)) == OCCUPIED

    def test_grazing_an_occupied_corner_blocks(self):
        vmap = free_map(res=1.0)
        vmap.states[5, 5, 5] = OCCUPIED
        # passes exactly through the corner (5, 5, z) of the occupied voxel
        assert not segment_free(vmap, (4.0, 6.0, 5.5), (6.0, 4.0, 5.5))
        # shifted away from the corner it stays inside free voxels
        assert segment_free(vmap, (4.0, 6.2, 5.5), (6.2, 4.0, 5.5)) is False
        assert segment_free(vmap, (4.1, 6.5, 5.5), (4.9, 6.5, 5.5))


class TestDetermineRegions:
    geo = GridGeometry((0.0, 0.0, 0.0), 1.0, (40, 40, 10))

    def test_no_frontiers(self):
        assert determine_regions([fov_at(Aabb((0, 0, 0), (5, 5, 5)), 1)], [], self.geo) == []

    def test_disjoint_records_touching_distinct_frontiers(self):
        store = FrontierStore(self.geo)
        f1 = frontier_at(store, [(2, 2, 2)])
        f2 = frontier_at(store, [(20, 20, 2)])
        fovs = [fov_at(Aabb((0, 0, 0), (5, 5, 5)), 1), fov_at(Aabb((18, 18, 0), (24, 24, 5)), 2)]
        regions = determine_regions(fovs, [f1, f2], self.geo)
        assert [r.aabb for r in regions] == [fovs[0].aabb, fovs[1].aabb]

    def test_record_not_touching_any_frontier_is_dropped(self):
        store = FrontierStore(self.geo)
        f1 = frontier_at(store, [(2, 2, 2)])
        fovs = [fov_at(Aabb((0, 0, 0), (5, 5, 5)), 1), fov_at(Aabb((30, 30, 0), (35, 35, 5)), 2)]
        regions = determine_regions(fovs, [f1], self.geo)
        assert len(regions) == 1 and regions[0].fov_ids == [1]

    def test_chain_merges_into_one_region(self):
        store = FrontierStore(self.geo)
        f = frontier_at(store, [(4, 4, 2), (5, 5, 2), (6, 6, 2), (9, 9, 2), (14, 14, 2)])
        boxes = [Aabb((0, 0, 0), (6, 6, 5)), Aabb((5, 5, 0), (11, 11, 5)), Aabb((10, 10, 0), (16, 16, 5))]
        fovs = [fov_at(b, i) for i, b in enumerate(boxes, start=1)]
        regions = determine_regions(fovs, [f], self.geo)
        assert len(regions) == 1
        assert regions[0].aabb == Aabb((0, 0, 0), (16, 16, 5))
        assert regions[0].fov_ids == [1, 2, 3]

    def test_random_layouts_match_union_find(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            store = FrontierStore(self.geo)
            frontiers = [frontier_at(store, [tuple(int(v) for v in rng.integers(0, [40, 40, 10]))])
                         for _ in range(int(rng.integers(1, 6)))]
            fovs = []
            for i in range(int(rng.integers(1, 9))):
                lo = rng.integers(0, [34, 34, 6])
                hi = lo + rng.integers(1, 12, 3)
                hi = np.minimum(hi, [39, 39, 9])
                fovs.append(fov_at(Aabb(tuple(int(v) for v in lo), tuple(int(v) for v in hi)), i + 1))
            kept = [f for f in fovs
                    if any(f.aabb.contains_many(self.geo.indices(fr.keys)).any() for fr in frontiers)]
            groups = union_find_groups([f.aabb for f in kept])
            expected = set()
            for g in groups:
                box = kept[g[0]].aabb
                for j in g[1:]:
                    box = box.merge(kept[j].aabb)
                expected.add((box, tuple(sorted(kept[j].scan_id for j in g))))
            got = {(r.aabb, tuple(r.fov_ids)) for r in determine_regions(fovs, frontiers, self.geo)}
            assert got == expected


class TestSukharev:
    def test_table_resolution_example(self):
        pts = sukharev_samples((0.0, 0.0, 0.0), (1.6, 1.6, 0.8), (0.8, 0.8, 0.8))
        assert pts.shape == (4, 3)
        assert {tuple(p) for p in np.round(pts, 9)} == {(0.4, 0.4, 0.4), (0.4, 1.2, 0.4),
                                                         (1.2, 0.4, 0.4), (1.2, 1.2, 0.4)}

    def test_region_smaller_than_cell(self):
        pts = sukharev_samples((1.0, 2.0, 3.0), (1.5, 2.2, 3.1), (0.8, 0.8, 0.8))
        assert np.allclose(pts, [[1.25, 2.1, 3.05]])

    def test_partial_trailing_cell_kept(self):
        pts = sukharev_samples((0.0, 0.0, 0.0), (2.0, 0.5, 0.5), (0.8, 0.8, 0.8))
        assert np.allclose(pts[:, 0], [0.4, 1.2, 1.8])

    def test_deterministic(self):
        a = sukharev_samples((0.1, 0.2, 0.3), (3.3, 2.2, 1.9), (0.8, 0.7, 0.6))
        b = sukharev_samples((0.1, 0.2, 0.3), (3.3, 2.2, 1.9), (0.8, 0.7, 0.6))
        assert a.tobytes() == b.tobytes()

    @given(st.lists(st.floats(0.05, 5.0), min_size=3, max_size=3),
           st.lists(st.floats(0.1, 1.5), min_size=3, max_size=3))
    def test_cells_partition_the_box(self, extent, l):
        pts = sukharev_samples((0.0, 0.0, 0.0), extent, l)
        counts = [max(1, math.ceil(e / s - 1e-9)) for e, s in zip(extent, l)]
        assert len(pts) == int(np.prod(counts))
        assert np.all(pts >= 0) and np.all(pts <= np.array(extent))


class TestExtend:
    params = RoadmapParams()

    def test_single_sample_far_from_home(self):
        vmap = free_map((40, 40, 10))
        graph = RoadMap((0.3, 0.3, 0.3))
        region = SamplingRegion(Aabb((30, 30, 2), (33, 33, 5)))
        added = extend(vmap, [region], graph, self.params)
        assert len(added) == 1 and graph.n_edges == 0

    def test_samples_closer_than_d_min_rejected(self):
        vmap = free_map((40, 40, 10))
        graph = RoadMap((0.3, 0.3, 0.3))
        params = RoadmapParams(l=(0.3, 0.8, 0.8))
        region = SamplingRegion(Aabb((30, 30, 2), (32, 33, 5)))  # 0.6 m wide: two samples 0.3 m apart
        assert len(sukharev_samples(*region_bounds(region, vmap.geometry), params.l)) == 2
        assert len(extend(vmap, [region], graph, params)) == 1

    def test_samples_in_non_free_voxels_rejected(self):
        vmap = free_map((40, 40, 10))
        vmap.states[28:36, 28:36, :] = UNKNOWN
        graph = RoadMap((0.3, 0.3, 0.3))
        region = SamplingRegion(Aabb((28, 28, 2), (35, 35, 5)))
        assert extend(vmap, [region], graph, self.params) == []

    def test_edges_link_nodes_within_bounds(self):
        vmap = free_map((40, 40, 10))
        graph = RoadMap((0.4, 0.4, 0.4))
        region = SamplingRegion(Aabb((0, 0, 0), (15, 15, 3)))
        extend(vmap, [region], graph, self.params)
        assert graph.n_edges > 0
        assert check_invariants(graph, vmap, self.params) == []

    def test_nodes_confined_to_regions(self):
        vmap = free_map((40, 40, 10))
        graph = RoadMap((7.5, 7.5, 1.0))
        regions = [SamplingRegion(Aabb((0, 0, 0), (9, 9, 9))), SamplingRegion(Aabb((20, 20, 0), (30, 30, 9)))]
        added = extend(vmap, regions, graph, self.params)
        boxes = [region_bounds(r, vmap.geometry) for r in regions]
        for nid in added:
            p = graph.positions[nid]
            assert any(np.all(p >= lo) and np.all(p <= hi) for lo, hi in boxes)

    def test_flight_band_clamps_samples(self):
        vmap = free_map((20, 20, 20))
        graph = RoadMap((0.3, 0.3, 0.3))
        params = RoadmapParams(z_band=(1.0, 2.0))
        added = extend(vmap, [SamplingRegion(Aabb((0, 0, 0), (19, 19, 19)))], graph, params)
        assert added and all(1.0 <= graph.positions[n][2] <= 2.0 for n in added)

    def test_convex_room_covered_within_d_max(self):
        vmap = free_map((25, 25, 12))
        graph = RoadMap((0.5, 0.5, 0.5))
        extend(vmap, [SamplingRegion(Aabb((0, 0, 0), (24, 24, 11)))], graph, self.params)
        pts = np.array(list(graph.positions.values()))
        from scipy.spatial import cKDTree
        centers = vmap.geometry.centers(np.argwhere(vmap.states == FREE))
        d, _ = cKDTree(pts).query(centers)
        assert d.max() <= self.params.d_max

    def test_reconnects_once_gap_becomes_free(self):
        vmap = free_map((40, 10, 10))
        vmap.states[18:22, :, :] = UNKNOWN
        graph = RoadMap((0.4, 1.0, 1.0))
        region = SamplingRegion(Aabb((0, 0, 0), (39, 9, 9)))
        extend(vmap, [region], graph, self.params)
        left = [n for n, p in graph.positions.items() if p[0] < 3.6]
        right = [n for n, p in graph.positions.items() if p[0] > 4.4]
        assert shortest_path(graph, left[0], right[0]) is None
        vmap.states[18:22, :, :] = FREE
        extend(vmap, [region], graph, self.params)
        assert shortest_path(graph, left[0], right[0]) is not None
        assert check_invariants(graph, vmap, self.params) == []

    def test_invariants_on_random_worlds(self, spec):
        rng = np.random.default_rng(21)
        for trial in range(50):
            boxes = []
            for _ in range(int(rng.integers(0, 5))):
                lo = rng.uniform([0.5, 0.5, 0.0], [5.0, 5.0, 1.0])
                boxes.append(tuple(lo) + tuple(lo + rng.uniform(0.3, 1.5, 3)))
            world = box_world((6.0, 6.0, 3.0), boxes)
            geo = world.geometry
            vmap = VoxelMap.from_geometry(geo)
            store = FrontierStore(geo)
            while True:
                start = rng.uniform([0.5, 0.5, 0.5], [5.5, 5.5, 2.5])
                if world.is_free(start):
                    break
            graph = RoadMap(start)
            for epoch in range(3):
                scan_id = epoch + 1
                scan, fov = capture(Pose(tuple(start), rng.uniform(-math.pi, math.pi)), spec, world, scan_id)
                vmap.integrate_scan(scan, scan_id)
                report = detect(vmap, [fov], store)
                extend(vmap, determine_regions([fov], report.new_frontiers, geo), graph, self.params)
                prune(graph, vmap, report.lost_free_keys, self.params)
                assert check_invariants(graph, vmap, self.params) == [], trial

    def test_deterministic(self):
        def build():
            vmap = free_map((40, 40, 10))
            vmap.states[10:12, 0:30, :] = OCCUPIED
            graph = RoadMap((0.4, 0.4, 0.4))
            extend(vmap, [SamplingRegion(Aabb((0, 0, 0), (39, 39, 9)))], graph, self.params)
            return graph.to_records()
        assert build() == build()


class TestAssignCandidates:
    params = RoadmapParams()

    def _setup(self):
        vmap = free_map((30, 30, 10))
        store = FrontierStore(vmap.geometry)
        return vmap, store

    def test_single_visible_node(self):
        vmap, store = self._setup()
        f = frontier_at(store, [(20, 15, 5)])
        graph = RoadMap((3.0, 3.0, 1.1))
        cands = assign_candidates(graph, [f], vmap, self.params)
        assert cands[0].node == graph.home and cands[0].reachable

    def test_nearest_blocked_second_clear(self):
        vmap, store = self._setup()
        f = frontier_at(store, [(15, 15, 5)])  # center (3.1, 3.1, 1.1)
        vmap.states[16:18, 10:20, :] = OCCUPIED  # wall at x in [3.2, 3.6)
        graph = RoadMap((4.0, 3.1, 1.1))  # behind the wall, 0.9 m away
        clear = graph.add_node((1.9, 3.1, 1.1))  # open side, 1.2 m away
        cands = assign_candidates(graph, [f], vmap, self.params)
        assert cands[0].node == clear
        # brute force over both nodes: only the second has a free segment
        assert not segment_free(vmap, graph.positions[graph.home], cands[0].target)
        assert segment_free(vmap, graph.positions[clear], cands[0].target)

    def test_sealed_frontier_unreachable(self):
        vmap, store = self._setup()
        vmap.states[12:19, 12:19, 2:9] = OCCUPIED
        vmap.states[13:18, 13:18, 3:8] = UNKNOWN
        vmap.states[15, 15, 5] = FREE
        f = frontier_at(store, [(15, 15, 5)])
        graph = RoadMap((2.0, 3.0, 1.1))
        graph.add_node((2.9, 3.0, 1.1))
        cands = assign_candidates(graph, [f], vmap, self.params)
        assert cands[0].node is None and not cands[0].reachable

    def test_excluded_nodes_skipped(self):
        vmap, store = self._setup()
        f = frontier_at(store, [(15, 15, 5)])
        graph = RoadMap((2.6, 3.1, 1.1))
        other = graph.add_node((2.0, 3.1, 1.1))
        cands = assign_candidates(graph, [f], vmap, self.params, exclude=[graph.home])
        assert cands[0].node == other

    def test_target_falls_back_to_member_voxel(self):
        vmap, store = self._setup()
        f = frontier_at(store, [(10, 10, 5), (11, 11, 5), (12, 10, 5)])  # ring around (11, 10, 5)
        vmap.states[11, 10, 5] = OCCUPIED
        graph = RoadMap((1.0, 1.0, 1.1))
        c = assign_candidates(graph, [f], vmap, self.params)[0]
        assert vmap.geometry.world_to_index(c.target) in {(10, 10, 5), (11, 11, 5), (12, 10, 5)}

    def test_empty_graph_rejected(self):
        vmap, store = self._setup()
        graph = RoadMap((1.0, 1.0, 1.0))
        graph.remove_node(graph.home)
        with pytest.raises(ValueError):
            assign_candidates(graph, [], vmap, self.params)


class TestPrune:
    params = RoadmapParams()

    def _graph(self):
        vmap = free_map((30, 30, 10))
        graph = RoadMap((0.5, 0.5, 0.5))
        extend(vmap, [SamplingRegion(Aabb((0, 0, 0), (29, 29, 9)))], graph, self.params)
        return vmap, graph

    def test_static_explored_world_prunes_nothing(self):
        vmap, graph = self._graph()
        before = graph.to_records()
        assert prune(graph, vmap) == []
        assert graph.to_records() == before

    def test_occupied_node_removed_with_edges(self):
        vmap, graph = self._graph()
        nid = next(n for n in sorted(graph.positions) if n != graph.home and graph.adj[n])
        nbrs = list(graph.adj[nid])
        idx = vmap.geometry.world_to_index(graph.positions[nid])
        vmap.set_state(idx, OCCUPIED)
        removed = prune(graph, vmap, np.array([vmap.geometry.key(idx)]), self.params)
        assert removed == [nid]
        assert nid not in graph.positions
        assert all(nid not in graph.adj[b] for b in nbrs)

    def test_random_mutations_restore_invariants(self):
        rng = np.random.default_rng(6)
        for trial in range(10):
            vmap, graph = self._graph()
            keys = vmap.geometry.keys(np.argwhere(rng.random(vmap.dims) < 0.01))
            for k, s in zip(keys, rng.choice([UNKNOWN, OCCUPIED], keys.size)):
                vmap.flat[k] = s
            prune(graph, vmap, keys, self.params)
            assert check_invariants(graph, vmap, self.params) == []
            prune(graph, vmap)  # full sweep agrees
            assert check_invariants(graph, vmap, self.params) == []


class TestShortestPath:
    def test_same_node(self):
        g = RoadMap((0.0, 0.0, 0.0))
        assert shortest_path(g, g.home, g.home) == ([g.home], 0.0)

    def test_direct_edge_beats_two_hops(self):
        g = RoadMap((0.0, 0.0, 0.0))
        b = g.add_node((0.75, 0.6614378277661477, 0.0))  # |ab| = 1
        c = g.add_node((1.5, 0.0, 0.0))  # |ac| = 1.5, |bc| = 1
        for x, y in ((g.home, b), (b, c), (g.home, c)):
            g.add_edge(x, y)
        path, length = shortest_path(g, g.home, c)
        assert path == [g.home, c] and length == pytest.approx(1.5)

    def test_disconnected(self):
        g = RoadMap((0.0, 0.0, 0.0))
        b = g.add_node((5.0, 0.0, 0.0))
        assert shortest_path(g, g.home, b) is None

    def test_matches_path_enumeration(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            g = RoadMap(tuple(rng.uniform(0, 3, 3)))
            for _ in range(11):
                g.add_node(tuple(rng.uniform(0, 3, 3)))
            for a, b in itertools.combinations(range(12), 2):
                if rng.random() < 0.3:
                    g.add_edge(a, b)
            s, t = (int(v) for v in rng.choice(12, 2, replace=False))
            got = shortest_path(g, s, t)
            ref = brute_force_shortest(g.adj, s, t)
            if ref is None:
                assert got is None
            else:
                assert got[1] == pytest.approx(ref[1], rel=1e-12)


class TestRoadMapStructure:
    def test_near_sorted_and_bounded(self):
        rng = np.random.default_rng(1)
        g = RoadMap((0.0, 0.0, 0.0))
        for _ in range(200):
            g.add_node(tuple(rng.uniform(-3, 3, 3)))
        for nid in (5, 17, 40):
            g.remove_node(nid)
        q = np.array([0.2, -0.1, 0.4])
        found = g.near(q, 1.5)
        expected = sorted((float(np.linalg.norm(p - q)), n) for n, p in g.positions.items()
                          if np.linalg.norm(p - q) <= 1.5)
        assert [n for _, n in found] == [n for _, n in expected]
        assert g.nearest(q)[1] == expected[0][1]

    def test_edges_symmetric(self):
        g = RoadMap((0.0, 0.0, 0.0))
        b = g.add_node((1.0, 0.0, 0.0))
        g.add_edge(g.home, b)
        assert g.adj[b][g.home] == g.adj[g.home][b] == 1.0
        g.remove_edge(b, g.home)
        assert g.n_edges == 0

    def test_params_validated(self):
        with pytest.raises(ValueError):
            RoadmapParams(d_min=2.0, d_max=1.0)
        with pytest.raises(ValueError):
            RoadmapParams(l=(0.8, 0.0, 0.8))
        assert RoadmapParams().r_c == 3.0

    def test_invariant_checker_flags_violations(self):
        vmap = free_map()
        params = RoadmapParams()
        g = RoadMap((0.5, 0.5, 0.5))
        b = g.add_node((0.7, 0.5, 0.5))  # closer than d_min, edge too short
        g.add_edge(g.home, b)
        c = g.add_node((2.5, 0.5, 0.5))
        vmap.set_state(vmap.geometry.world_to_index((2.5, 0.5, 0.5)), OCCUPIED)
        bad = check_invariants(g, vmap, params)
        assert any("closer than d_min" in m for m in bad)
        assert any("outside bounds" in m for m in bad)
        assert any(f"node {c} not in free space" in m for m in bad)
