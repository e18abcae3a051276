"""Independent reference implementations for verification and benchmarking.

Nothing here shares incremental state with the frontier detector or the
planner: the naive detector works on whole-grid array slices, the two
AABB baselines keep their own frontier bookkeeping, the ray oracle is a
scalar grid walk, and the exhaustive planner uses scipy's Dijkstra.
"""
from __future__ import annotations

import itertools
import math
import time
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .frontier import DEFAULT_N_MAX, process_frontiers
from .voxel_map import FREE, OUTSIDE, UNKNOWN, Aabb, VoxelMap


@dataclass
class OracleReport:
    keys: np.ndarray  # sorted frontier voxel keys
    scanned: int
    elapsed: float

    def as_set(self) -> set[int]:
        return set(self.keys.tolist())


# -- frontier status by array slicing ----------------------------------------

def _status_block(padded: np.ndarray, lo, hi) -> np.ndarray:
    """Frontier flags for the (unpadded, inclusive) index box [lo, hi]."""
    sl = tuple(slice(lo[a] + 1, hi[a] + 2) for a in range(3))
    core = padded[sl]
    unknown_nb = np.zeros(core.shape, dtype=bool)
    for a in range(3):
        for d in (-1, 1):
            nb = tuple(slice(lo[b] + 1 + (d if b == a else 0), hi[b] + 2 + (d if b == a else 0))
                       for b in range(3))
            unknown_nb |= padded[nb] == UNKNOWN
    return (core == FREE) & unknown_nb


def _block_keys(vmap: VoxelMap, lo, mask: np.ndarray) -> np.ndarray:
    idx = np.argwhere(mask) + np.asarray(lo)
    return vmap.geometry.keys(idx)


def naive_detect(vmap: VoxelMap) -> OracleReport:
    """Frontier voxels of the whole grid."""
    t0 = time.perf_counter()
    dims = vmap.geometry.dims
    mask = _status_block(vmap._grid, (0, 0, 0), tuple(d - 1 for d in dims))
    keys = np.sort(_block_keys(vmap, (0, 0, 0), mask))
    return OracleReport(keys, int(np.prod(dims)), time.perf_counter() - t0)


def merge_boxes(boxes: Sequence[Optional[Aabb]]) -> Optional[Aabb]:
    out = None
    for b in boxes:
        if b is not None:
            out = b if out is None else out.merge(b)
    return out


class _ClusterBook:
    """Frontier clusters kept by an AABB baseline: owner per voxel plus member lists."""

    def __init__(self, vmap: VoxelMap, n_max: int):
        self.geometry = vmap.geometry
        self.n_max = n_max
        self.owner = np.full(vmap.geometry.padded_size, -1, dtype=np.int64)
        self.clusters: dict[int, np.ndarray] = {}
        self._next = 0
        self.off26 = [int(o) for o in vmap.geometry.offsets26]

    def add(self, clusters: list[list[int]]) -> None:
        """Store grown clusters, split into pieces of at most ``n_max`` voxels."""
        parts = [np.array(c, dtype=np.int64) for c in clusters]
        for arr in process_frontiers(parts, self.geometry, self.n_max):
            cid = self._next
            self._next += 1
            self.owner[arr] = cid
            self.clusters[cid] = arr

    def remove_touching(self, keys: np.ndarray) -> list[int]:
        hit = np.unique(self.owner[keys])
        removed = []
        for cid in hit[hit >= 0].tolist():
            members = self.clusters.pop(cid)
            self.owner[members] = -1
            removed.extend(members.tolist())
        return removed

    def keys(self) -> np.ndarray:
        if not self.clusters:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate(list(self.clusters.values())))


class AabbRgDetector:
    """Baseline: scan every voxel of the change box, then region-grow clusters."""

    name = "aabb_rg"

    def __init__(self, vmap: VoxelMap, n_max: int = DEFAULT_N_MAX):
        self.book = _ClusterBook(vmap, n_max)

    def detect(self, vmap: VoxelMap, boxes: Sequence[Optional[Aabb]]) -> OracleReport:
        t0 = time.perf_counter()
        box = merge_boxes(boxes)
        if box is None:
            return OracleReport(self.book.keys(), 0, time.perf_counter() - t0)
        box = box.grow(1).clip(vmap.geometry.dims)
        grid = vmap._grid
        flat = vmap.flat
        status = _status_block(grid, box.lo, box.hi)
        box_keys = vmap.geometry.box_keys(box)
        removed = self.book.remove_touching(box_keys)
        is_frontier = np.zeros(vmap.geometry.padded_size, dtype=bool)
        is_frontier[box_keys] = status.ravel()
        # members outside the box did not change state, the rest were just scanned
        seeds = box_keys[status.ravel()].tolist()
        inside = np.zeros(vmap.geometry.padded_size, dtype=bool)
        inside[box_keys] = True
        for k in removed:
            if not inside[k]:
                is_frontier[k] = True
                seeds.append(k)
        owner = self.book.owner
        off6 = [int(o) for o in vmap.geometry.offsets6]

        def frontier(k: int) -> bool:
            if inside[k] or is_frontier[k]:
                return bool(is_frontier[k])
            return flat[k] == FREE and any(flat[k + o] == UNKNOWN for o in off6)

        grown = []
        for s in seeds:
            if owner[s] != -1:
                continue
            owner[s] = -2
            members = []
            queue = deque([s])
            while queue:
                k = queue.popleft()
                members.append(k)
                for o in self.book.off26:
                    n = k + o
                    if owner[n] == -1 and flat[n] != OUTSIDE and frontier(n):
                        owner[n] = -2
                        queue.append(n)
            grown.append(members)
        self.book.add(grown)
        return OracleReport(self.book.keys(), box.volume, time.perf_counter() - t0)


class AabbWfdDetector:
    """Baseline: wavefront search over the Free voxels of the change box.

    Four marks as in wavefront frontier detection: Map-Open / Map-Close for
    the breadth-first walk over known space, Frontier-Open / Frontier-Close
    for the extraction of each frontier it reaches.
    """

    name = "aabb_wfd"

    def __init__(self, vmap: VoxelMap, n_max: int = DEFAULT_N_MAX):
        self.book = _ClusterBook(vmap, n_max)

    def detect(self, vmap: VoxelMap, boxes: Sequence[Optional[Aabb]],
               seeds: Sequence[Sequence[int]] = ()) -> OracleReport:
        t0 = time.perf_counter()
        box = merge_boxes(boxes)
        if box is None:
            return OracleReport(self.book.keys(), 0, time.perf_counter() - t0)
        geo = vmap.geometry
        box = box.grow(1).clip(geo.dims)
        flat = vmap.flat
        box_keys = geo.box_keys(box)
        removed = self.book.remove_touching(box_keys)
        inside = np.zeros(geo.padded_size, dtype=bool)
        inside[box_keys] = True
        off6 = [int(o) for o in geo.offsets6]
        off26 = self.book.off26
        owner = self.book.owner
        grown: list[list[int]] = []
        map_open = set()
        map_close = set()
        scanned = 0

        def is_frontier(k: int) -> bool:
            return flat[k] == FREE and any(flat[k + o] == UNKNOWN for o in off6)

        def extract(start: int) -> None:
            frontier_open = deque([start])
            frontier_close = {start}
            members = []
            while frontier_open:
                k = frontier_open.popleft()
                if owner[k] != -1 or not is_frontier(k):
                    continue
                members.append(k)
                owner[k] = -2
                for o in off26:
                    n = k + o
                    if n not in frontier_close and owner[n] == -1:
                        frontier_close.add(n)
                        frontier_open.append(n)
            if members:
                grown.append(members)

        def wave(start: int) -> None:
            nonlocal scanned
            map_queue = deque([start])
            map_open.add(start)
            while map_queue:
                k = map_queue.popleft()
                if k in map_close:
                    continue
                map_close.add(k)
                scanned += 1
                if is_frontier(k):
                    if owner[k] == -1:
                        extract(k)
                for o in off6:
                    n = k + o
                    if inside[n] and n not in map_open and n not in map_close and flat[n] == FREE:
                        map_open.add(n)
                        map_queue.append(n)

        starts = []
        for s in seeds:
            if geo.in_bounds(s):
                starts.append(geo.key(s))
        starts += box_keys[flat[box_keys] == FREE].tolist()
        for s in starts:
            if inside[s] and flat[s] == FREE and s not in map_close:
                wave(s)
        for k in removed:
            if not inside[k] and owner[k] == -1 and is_frontier(k):
                extract(k)
        self.book.add(grown)
        return OracleReport(self.book.keys(), scanned, time.perf_counter() - t0)


# -- scalar ray walk ---------------------------------------------------------

def dda_voxels(origin, direction, length: float) -> list[tuple[int, int, int]]:
    """Voxels (grid units) crossed by origin + t*direction, 0 <= t <= length.

    Classic incremental grid walk; a voxel is reported only when the ray
    spends a positive length inside it.
    """
    o = [float(v) for v in origin]
    d = [float(v) for v in direction]
    cur = [math.floor(v) for v in o]
    step = [0, 0, 0]
    t_next = [math.inf] * 3
    t_delta = [math.inf] * 3
    for a in range(3):
        if d[a] > 0:
            step[a] = 1
            t_next[a] = (cur[a] + 1 - o[a]) / d[a]
            t_delta[a] = 1.0 / d[a]
        elif d[a] < 0:
            step[a] = -1
            t_next[a] = (cur[a] - o[a]) / d[a]
            t_delta[a] = -1.0 / d[a]
    out = []
    t = 0.0
    while t < length:
        t_exit = min(min(t_next), length)
        if t_exit - t > 1e-9:
            out.append(tuple(cur))
        if t_exit >= length:
            break
        for a in range(3):
            if t_next[a] == t_exit:
                cur[a] += step[a]
                t_next[a] += t_delta[a]
        t = t_exit
    return out


# -- graph search ------------------------------------------------------------

def brute_force_shortest(adj: dict[int, dict[int, float]], start: int, goal: int):
    """Shortest (path, length) by enumerating every simple path; None if disconnected."""
    best = None

    def walk(node, path, length):
        nonlocal best
        if best is not None and length > best[1]:
            return
        if node == goal:
            if best is None or length < best[1]:
                best = (list(path), length)
            return
        for nxt, w in adj[node].items():
            if nxt not in path:
                path.append(nxt)
                walk(nxt, path, length + w)
                path.pop()

    walk(start, [start], 0.0)
    return best


def union_find_groups(boxes: Sequence[Aabb]) -> list[list[int]]:
    """Indices of boxes grouped by transitive pairwise intersection."""
    parent = list(range(len(boxes)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in itertools.combinations(range(len(boxes)), 2):
        if boxes[i].intersects(boxes[j]):
            parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(len(boxes)):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values())


def frustum_voxels_brute(vmap: VoxelMap, position, yaw: float, spec) -> set[int]:
    """Voxels whose center lies inside the sensor frustum between min and max range."""
    geo = vmap.geometry
    idx = np.argwhere(np.ones(geo.dims, dtype=bool))
    c = geo.centers(idx) - np.asarray(position, dtype=float)
    cy, sy = math.cos(yaw), math.sin(yaw)
    x = c[:, 0] * cy + c[:, 1] * sy
    y = -c[:, 0] * sy + c[:, 1] * cy
    z = c[:, 2]
    r = np.linalg.norm(c, axis=1)
    inside = ((x > 0) & (np.abs(y) <= x * spec.tan_h) & (np.abs(z) <= x * spec.tan_v)
              & (r >= spec.min_range) & (r <= spec.max_range))
    return set(geo.keys(idx[inside]).tolist())


# -- exhaustive planning -----------------------------------------------------

@dataclass
class ExhaustivePlan:
    node: Optional[int]
    utility: float
    gain: float
    yaw: float
    distance: float
    evaluated: int


def exhaustive_plan(graph, candidates, robot_position, vmap, params,
                    gain_fn: Callable[[int], tuple[float, float]], d_max: float = 1.5) -> ExhaustivePlan:
    """Distances to every node, gains of every reachable candidate, argmax utility.

    Ties go to the smaller node id.
    """
    from .planner import anchor  # the same anchoring rule, no search code shared

    source, tmp = anchor(graph, robot_position, vmap, d_max)
    try:
        ids = sorted(graph.positions)
        index = {n: i for i, n in enumerate(ids)}
        rows, cols, vals = [], [], []
        for a, nbrs in graph.adj.items():
            for b, w in nbrs.items():
                rows.append(index[a])
                cols.append(index[b])
                vals.append(w)
        mat = csr_matrix((vals, (rows, cols)), shape=(len(ids), len(ids)))
        dist = dijkstra(mat, directed=True, indices=index[source])
        nodes = sorted({c.node for c in candidates if c.node is not None})
        best = ExhaustivePlan(None, 0.0, 0.0, 0.0, math.inf, 0)
        for n in nodes:
            d = float(dist[index[n]])
            if not math.isfinite(d):
                continue
            yaw, gain = gain_fn(n)
            best.evaluated += 1
            u = gain * math.exp(-params.lam * d)
            if u > 0 and (u > best.utility or (u == best.utility and best.node is not None
                                                and n < best.node)):
                best = ExhaustivePlan(n, u, gain, yaw, d, best.evaluated)
        return best
    finally:
        if tmp is not None:
            graph.remove_node(tmp)
