"""Incremental roadmap over free space built from Sukharev-grid samples."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .raycast import traverse
from .voxel_map import FREE, OCCUPIED, UNKNOWN, Aabb, GridGeometry, VoxelMap


@dataclass(frozen=True)
class RoadmapParams:
    d_min: float = 0.5
    d_max: float = 1.5
    l: tuple[float, float, float] = (0.8, 0.8, 0.8)
    z_band: tuple[float, float] = (-math.inf, math.inf)
    candidate_k: int = 10
    candidate_radius: Optional[float] = None  # defaults to 2 * d_max

    def __post_init__(self):
        if not 0 < self.d_min <= self.d_max:
            raise ValueError("need 0 < d_min <= d_max")
        if any(v <= 0 for v in self.l):
            raise ValueError("sampling resolutions must be positive")

    @property
    def r_c(self) -> float:
        return self.candidate_radius if self.candidate_radius is not None else 2.0 * self.d_max


_ON_PLANE = 1e-7  # grid units; coordinates this close to an integer lie on a voxel face


def _axis_cells(c: float) -> tuple[int, ...]:
    r = round(c)
    if abs(c - r) < _ON_PLANE:
        return (r - 1, r)
    return (math.floor(c),)


def touched_voxels(geometry: GridGeometry, a, b) -> np.ndarray:
    """Indices of every voxel whose closed box meets the segment a->b (meters).

    The voxels the segment spends positive length in, plus those it only
    grazes at a face, edge or corner.  Rows are sorted lexicographically.
    """
    ga = [float(v) for v in geometry.to_grid(np.asarray(a, dtype=float))]
    gb = [float(v) for v in geometry.to_grid(np.asarray(b, dtype=float))]
    d = [gb[i] - ga[i] for i in range(3)]
    ts = {0.0, 1.0}
    for i in range(3):
        if d[i] != 0.0:
            lo, hi = sorted((ga[i], gb[i]))
            for k in range(math.ceil(lo), math.floor(hi) + 1):
                ts.add((k - ga[i]) / d[i])
    ts = sorted(t for t in ts if 0.0 <= t <= 1.0)
    params = ts + [0.5 * (t0 + t1) for t0, t1 in zip(ts, ts[1:])]
    cells = set()
    for t in params:
        axes = [_axis_cells(ga[i] + t * d[i]) for i in range(3)]
        for x in axes[0]:
            for y in axes[1]:
                for z in axes[2]:
                    cells.add((x, y, z))
    return np.array(sorted(cells), dtype=np.int64).reshape(-1, 3)


_CORNERS = np.array([[dx, dy, dz] for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)])


def segment_states(vmap: VoxelMap, a, b) -> np.ndarray:
    """Vectorized :func:`segment_state` for segments ``a[i] -> b[i]``."""
    geo = vmap.geometry
    ga = geo.to_grid(np.asarray(a, dtype=float).reshape(-1, 3))
    gb = geo.to_grid(np.asarray(b, dtype=float).reshape(-1, 3))
    n = ga.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.uint8)
    delta = gb - ga
    length = np.linalg.norm(delta, axis=1)
    d = np.divide(delta, length[:, None], out=np.zeros_like(delta), where=length[:, None] > 0)
    _, t0, t1, valid = traverse(ga, d, length)
    # Sample points: endpoints, interval midpoints and face crossings.  A
    # point lying on a voxel plane touches the voxels on both sides of it.
    # A crossing on a single plane only touches the voxels of the two
    # adjacent intervals, which their midpoints already cover, so crossings
    # matter only at edges and corners.
    m = t0.shape[1]
    ts = np.concatenate([np.zeros((n, 1)), length[:, None], 0.5 * (t0 + t1), t0, t1], axis=1)
    use = np.concatenate([np.ones((n, 2), dtype=bool), valid, valid, valid], axis=1)
    ts = np.where(use, ts, 0.0)
    p = ga[:, None, :] + ts[:, :, None] * d[:, None, :]
    rp = np.round(p)
    near = np.abs(p - rp) < _ON_PLANE
    cnt = near.sum(axis=2)
    interior = np.zeros(use.shape, dtype=bool)
    interior[:, :2 + m] = True
    expand = use & ((cnt >= 2) | (interior & (cnt == 1)))
    plain = use & interior & (cnt == 0)

    dims = np.array(geo.dims)
    sx, sy, _ = geo.strides
    occ = np.zeros(n, dtype=bool)
    unk = np.zeros(n, dtype=bool)

    def account(seg, cells):
        inb = np.all((cells >= 0) & (cells < dims), axis=-1)
        keys = (cells[..., 0] + 1) * sx + (cells[..., 1] + 1) * sy + cells[..., 2] + 1
        st = np.where(inb, vmap.flat.take(np.where(inb, keys, 0)), OCCUPIED)
        occ[seg[st == OCCUPIED]] = True
        unk[seg[st == UNKNOWN]] = True

    seg, col = np.nonzero(plain)
    account(seg, np.floor(p[seg, col]).astype(np.int64))
    seg, col = np.nonzero(expand)
    if seg.size:
        nq = near[seg, col]
        lo = np.where(nq, rp[seg, col] - 1, np.floor(p[seg, col])).astype(np.int64)
        keep = np.all(nq[:, None, :] | (_CORNERS == 0), axis=2)  # (k, 8)
        rows, corner = np.nonzero(keep)
        account(seg[rows], lo[rows] + _CORNERS[corner])
    return np.where(occ, OCCUPIED, np.where(unk, UNKNOWN, FREE)).astype(np.uint8)


def segment_state(vmap: VoxelMap, a, b) -> int:
    """FREE when every voxel the segment a->b touches is Free; otherwise
    OCCUPIED when some touched voxel is Occupied or outside the map, else
    UNKNOWN.  Touching includes grazing a face, edge or corner."""
    geo = vmap.geometry
    cells = touched_voxels(geo, a, b)
    if not geo.in_bounds_many(cells).all():
        return OCCUPIED
    st = vmap.flat[geo.keys(cells)]
    if np.any(st == OCCUPIED):
        return OCCUPIED
    return FREE if np.all(st == FREE) else UNKNOWN


def segment_free(vmap: VoxelMap, a, b) -> bool:
    """True when every voxel the segment a->b touches is Free.

    Unknown and out-of-map voxels count as blocked.
    """
    return segment_state(vmap, a, b) == FREE


def point_free(vmap: VoxelMap, p) -> bool:
    geo = vmap.geometry
    idx = geo.world_to_index(p)
    return geo.in_bounds(idx) and vmap.flat[geo.key(idx)] == FREE


class RoadMap:
    """Undirected geometric graph; node coordinates are also kept in a flat
    array (row = node id) so radius queries are a single vectorized scan."""

    def __init__(self, home):
        self.positions: dict[int, np.ndarray] = {}
        self._pts: dict[int, tuple[float, float, float]] = {}
        self.adj: dict[int, dict[int, float]] = {}
        self._arr = np.zeros((64, 3))
        self._alive = np.zeros(64, dtype=bool)
        self._next_id = 0
        # node pairs whose segment hit an Occupied voxel; valid while no
        # Occupied voxel changes state (see forget_walled)
        self.walled: set[tuple[int, int]] = set()
        self.home = self.add_node(home)

    def forget_walled(self) -> None:
        self.walled.clear()

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n_edges(self) -> int:
        return sum(len(v) for v in self.adj.values()) // 2

    def edges(self) -> Iterable[tuple[int, int, float]]:
        for a, nbrs in self.adj.items():
            for b, w in nbrs.items():
                if a < b:
                    yield a, b, w

    def add_node(self, p) -> int:
        nid = self._next_id
        self._next_id += 1
        if nid >= len(self._arr):
            self._arr = np.concatenate([self._arr, np.zeros_like(self._arr)])
            self._alive = np.concatenate([self._alive, np.zeros_like(self._alive)])
        self.positions[nid] = np.asarray(p, dtype=float).copy()
        self._pts[nid] = tuple(float(v) for v in p)
        self._arr[nid] = self.positions[nid]
        self._alive[nid] = True
        self.adj[nid] = {}
        return nid

    def add_edge(self, a: int, b: int) -> float:
        w = math.dist(self._pts[a], self._pts[b])
        self.adj[a][b] = w
        self.adj[b][a] = w
        return w

    def remove_edge(self, a: int, b: int) -> None:
        self.adj[a].pop(b, None)
        self.adj[b].pop(a, None)

    def remove_node(self, nid: int) -> None:
        for b in list(self.adj[nid]):
            self.adj[b].pop(nid, None)
        del self.adj[nid]
        del self.positions[nid]
        del self._pts[nid]
        self._alive[nid] = False

    def near(self, p, radius: float) -> list[tuple[float, int]]:
        """Nodes within ``radius`` of ``p`` as (distance, id), nearest first."""
        q = np.asarray(p, dtype=float)
        n = self._next_id
        diff = self._arr[:n] - q
        d2 = np.einsum("ij,ij->i", diff, diff)
        rows = np.nonzero(self._alive[:n] & (d2 <= radius * radius * (1 + 1e-9) + 1e-12))[0]
        if rows.size == 0:
            return []
        qt = q.tolist()
        pts = self._pts
        found = [(math.dist(pts[i], qt), i) for i in rows.tolist()]
        found = [f for f in found if f[0] <= radius]
        found.sort()
        return found

    def nearest(self, p) -> Optional[tuple[float, int]]:
        if not self.positions:
            return None
        p = tuple(float(v) for v in p)
        return min((math.dist(q, p), nid) for nid, q in self._pts.items())

    def to_records(self) -> list[dict]:
        """JSON-ready node and edge records."""
        out = [{"type": "node", "id": nid, "p": [round(float(v), 6) for v in p]}
               for nid, p in sorted(self.positions.items())]
        out += [{"type": "edge", "a": a, "b": b, "w": round(w, 6)} for a, b, w in sorted(self.edges())]
        return out


@dataclass
class SamplingRegion:
    aabb: Aabb
    fov_ids: list[int] = field(default_factory=list)


def determine_regions(fovs: Sequence, new_frontiers: Sequence, geometry: GridGeometry) -> list[SamplingRegion]:
    """Merge the boxes of FOVs touching a new frontier into maximal overlapping groups.

    Two kept FOVs end up in the same region when a chain of pairwise
    overlapping FOV boxes links them.
    """
    if not new_frontiers:
        return []
    fidx = [geometry.indices(f.keys) for f in new_frontiers]
    kept = []
    for fov in fovs:
        if fov.aabb is None:
            continue
        for f, idx in zip(new_frontiers, fidx):
            if fov.aabb.intersects(f.aabb) and fov.aabb.contains_many(idx).any():
                kept.append(fov)
                break
    groups: list[tuple[SamplingRegion, list[Aabb]]] = []
    for fov in kept:
        region = SamplingRegion(fov.aabb, [fov.scan_id])
        members = [fov.aabb]
        rest = []
        for g, boxes in groups:
            if any(b.intersects(fov.aabb) for b in boxes):
                region.aabb = region.aabb.merge(g.aabb)
                region.fov_ids = g.fov_ids + region.fov_ids
                members = boxes + members
            else:
                rest.append((g, boxes))
        region.fov_ids.sort()
        groups = rest + [(region, members)]
    return sorted((g for g, _ in groups), key=lambda g: g.fov_ids[0])


def sukharev_samples(lo, hi, l: Sequence[float]) -> np.ndarray:
    """Centroids of the cells of an ``l``-sized partition of the box [lo, hi] (meters).

    Cells start at ``lo``; a trailing partial cell is kept and its centroid
    is the center of the clipped cell.  Output order is x-major.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    axes = []
    for a in range(3):
        extent = hi[a] - lo[a]
        if extent <= 0:
            axes.append(np.array([lo[a]]))
            continue
        n = max(1, int(math.ceil(extent / l[a] - 1e-9)))
        starts = lo[a] + np.arange(n) * l[a]
        ends = np.minimum(starts + l[a], hi[a])
        axes.append(0.5 * (starts + ends))
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def region_bounds(region: SamplingRegion, geometry: GridGeometry, z_band=(-math.inf, math.inf)):
    """Metric extent of a region box, clamped to the flight band."""
    lo = np.asarray(geometry.origin) + np.array(region.aabb.lo) * geometry.resolution
    hi = np.asarray(geometry.origin) + (np.array(region.aabb.hi) + 1) * geometry.resolution
    lo[2] = max(lo[2], z_band[0])
    hi[2] = min(hi[2], z_band[1])
    return lo, hi


def extend(vmap: VoxelMap, regions: Sequence[SamplingRegion], graph: RoadMap,
           params: RoadmapParams) -> list[int]:
    """Add feasible Sukharev samples as nodes and connect collision-free edges.

    After sampling a region, nodes already inside it also retry edges to
    their neighbors: space that was Unknown when they were inserted may be
    Free now, and without this two node clusters separated by once-unknown
    space would never join.
    """
    added = []
    for region in regions:
        lo, hi = region_bounds(region, vmap.geometry, params.z_band)
        if np.any(hi < lo):
            continue
        for p in sukharev_samples(lo, hi, params.l):
            if not point_free(vmap, p):
                continue
            near = graph.near(p, params.d_max)
            if near and near[0][0] < params.d_min:
                continue
            nid = graph.add_node(p)
            added.append(nid)
            others = [other for d, other in near if params.d_min <= d <= params.d_max]
            if others:
                states = segment_states(vmap, np.broadcast_to(p, (len(others), 3)), graph._arr[others])
                for other, state in zip(others, states.tolist()):
                    if state == FREE:
                        graph.add_edge(nid, other)
        _reconnect(vmap, graph, params, lo, hi)
    return added


def _reconnect(vmap: VoxelMap, graph: RoadMap, params: RoadmapParams, lo, hi) -> None:
    n = graph._next_id
    inside = np.nonzero(graph._alive[:n] & np.all((graph._arr[:n] >= lo) & (graph._arr[:n] <= hi), axis=1))[0]
    pairs = set()
    for nid in inside.tolist():
        for d, other in graph.near(graph.positions[nid], params.d_max):
            pair = (min(nid, other), max(nid, other))
            if other == nid or other in graph.adj[nid] or d < params.d_min or pair in graph.walled:
                continue
            pairs.add(pair)
    if not pairs:
        return
    pairs = sorted(pairs)
    idx = np.array(pairs)
    states = segment_states(vmap, graph._arr[idx[:, 0]], graph._arr[idx[:, 1]])
    for pair, state in zip(pairs, states.tolist()):
        if state == FREE:
            graph.add_edge(*pair)
        elif state == OCCUPIED:
            graph.walled.add(pair)


def prune(graph: RoadMap, vmap: VoxelMap, lost_free_keys: Optional[np.ndarray] = None,
          params: Optional[RoadmapParams] = None) -> list[int]:
    """Drop nodes no longer in Free space and edges no longer collision-free.

    With ``lost_free_keys`` (voxels that left the Free state) only nodes and
    edges near those voxels are rechecked; otherwise the whole graph is.
    Returns removed node ids; the home node is kept.
    """
    geo = vmap.geometry
    if lost_free_keys is not None:
        lost_free_keys = np.asarray(lost_free_keys, dtype=np.int64)
        if lost_free_keys.size == 0:
            return []
        pts = geo.centers(geo.indices(lost_free_keys))
        reach = (params.d_max if params else 1.5) + geo.resolution
        suspects = set()
        for p in pts:
            for _, nid in graph.near(p, reach):
                suspects.add(nid)
    else:
        suspects = set(graph.positions)
    removed = []
    for nid in sorted(suspects):
        if nid not in graph.positions:
            continue
        if nid != graph.home and not point_free(vmap, graph.positions[nid]):
            graph.remove_node(nid)
            removed.append(nid)
            continue
        others = sorted(graph.adj[nid])
        if others:
            states = segment_states(vmap, np.broadcast_to(graph._arr[nid], (len(others), 3)), graph._arr[others])
            for other, state in zip(others, states.tolist()):
                if state != FREE:
                    graph.remove_edge(nid, other)
    return removed


@dataclass
class Candidate:
    frontier_id: int
    node: Optional[int]  # None: no node can see the frontier this epoch
    target: np.ndarray  # point the connecting segment ends at

    @property
    def reachable(self) -> bool:
        return self.node is not None


def frontier_target(frontier, vmap: VoxelMap) -> np.ndarray:
    """Frontier centroid, or the member voxel center nearest to it when the centroid is not Free."""
    c = np.asarray(frontier.centroid, dtype=float)
    if point_free(vmap, c):
        return c
    geo = vmap.geometry
    centers = geo.centers(geo.indices(frontier.keys))
    return centers[int(np.argmin(np.linalg.norm(centers - c, axis=1)))]


def assign_candidates(graph: RoadMap, frontiers: Iterable, vmap: VoxelMap,
                      params: RoadmapParams, exclude: Iterable[int] = ()) -> list[Candidate]:
    """Pick, for each frontier, the nearest node with a collision-free segment to it."""
    if not len(graph):
        raise ValueError("roadmap is empty")
    exclude = set(exclude)
    chosen = []
    starts, ends = [], []
    for f in sorted(frontiers, key=lambda f: f.id):
        target = frontier_target(f, vmap)
        near = [(d, n) for d, n in graph.near(target, params.r_c) if n not in exclude]
        ids = [nid for _, nid in near[:params.candidate_k]]
        chosen.append((f.id, target, ids))
        starts.extend(ids)
        ends.extend([target] * len(ids))
    states = segment_states(vmap, graph._arr[starts], np.array(ends).reshape(-1, 3)).tolist()
    out = []
    pos = 0
    for fid, target, ids in chosen:
        node = None
        for nid, state in zip(ids, states[pos:pos + len(ids)]):
            if state == FREE:
                node = nid
                break
        pos += len(ids)
        out.append(Candidate(frontier_id=fid, node=node, target=target))
    return out


def shortest_path(graph: RoadMap, start: int, goal: int) -> Optional[tuple[list[int], float]]:
    """Dijkstra; returns (node path, length) or None when disconnected."""
    if start not in graph.adj or goal not in graph.adj:
        raise KeyError("both nodes must be in the graph")
    dist = {start: 0.0}
    prev: dict[int, int] = {}
    heap = [(0.0, start)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == goal:
            path = [u]
            while path[-1] != start:
                path.append(prev[path[-1]])
            return path[::-1], d
        for v, w in graph.adj[u].items():
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    return None


def check_invariants(graph: RoadMap, vmap: VoxelMap, params: RoadmapParams) -> list[str]:
    """Full post-condition sweep; returns human-readable violations."""
    bad = []
    ids = sorted(graph.positions)
    for nid in ids:
        if nid != graph.home and not point_free(vmap, graph.positions[nid]):
            bad.append(f"node {nid} not in free space")
    edges = sorted(graph.edges())
    for a, b, w in edges:
        if graph.adj[b].get(a) != w:
            bad.append(f"edge {a}-{b} not symmetric")
        if not params.d_min - 1e-9 <= w <= params.d_max + 1e-9:
            bad.append(f"edge {a}-{b} length {w:.3f} outside bounds")
    if edges:
        ends = np.array([(a, b) for a, b, _ in edges])
        states = segment_states(vmap, graph._arr[ends[:, 0]], graph._arr[ends[:, 1]])
        for (a, b, _), state in zip(edges, states.tolist()):
            if state != FREE:
                bad.append(f"edge {a}-{b} in collision")
    if len(ids) > 1:
        pts = np.array([graph.positions[i] for i in ids])
        from scipy.spatial import cKDTree

        pairs = cKDTree(pts).query_pairs(params.d_min - 1e-9)
        for i, j in sorted(pairs):
            bad.append(f"nodes {ids[i]} and {ids[j]} closer than d_min")
    return bad
