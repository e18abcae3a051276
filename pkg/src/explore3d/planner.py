"""Exploration planning: lazy utility-maximizing Dijkstra, voxel gain, smoothing."""
from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .raycast import traverse
from .roadmap import Candidate, RoadMap, segment_free
from .sensor import Pose, SensorSpec, normalize_yaw, world_directions
from .voxel_map import FREE, OCCUPIED, OUTSIDE, UNKNOWN, VoxelMap

GainFn = Callable[[int], tuple[float, float]]  # node id -> (yaw, gain)


def utility(gain: float, cost: float) -> float:
    """Gain discounted by motion cost: ``gain * exp(-cost)``."""
    if gain < 0 or cost < 0:
        raise ValueError("gain and cost must be non-negative")
    return gain * math.exp(-cost)


def radius_bound(best_utility: float, i_max: float, lam: float) -> float:
    """Largest path length at which a max-gain candidate could still tie ``best_utility``."""
    if lam <= 0 or best_utility <= 0:
        return math.inf
    return math.log(i_max / best_utility) / lam


def max_gain_bound(spec: SensorSpec, resolution: float, yaws: Sequence[float], stride: int = 1) -> int:
    """Largest gain any position can reach at the given yaws.

    Gain counts a subset of the in-range voxels crossed by the sensor rays,
    so the all-Unknown count of those voxels bounds it.
    """
    best = 0
    for yaw in yaws:
        t = _ray_template(spec, resolution, float(yaw), stride)
        cells = np.stack([t.ox[t.in_range], t.oy[t.in_range], t.oz[t.in_range]], axis=1)
        best = max(best, int(np.unique(cells, axis=0).shape[0]))
    return best


@dataclass
class UtilityParams:
    lam: float = 0.5
    i_max: float = 1.0
    yaw_bins: int = 8
    ray_stride: int = 2  # gain raycast budget: every n-th sensor ray per axis

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not self.i_max > 0:
            raise ValueError("i_max must be positive")
        if self.yaw_bins < 1:
            raise ValueError("need at least one yaw bin")

    @classmethod
    def for_sensor(cls, spec: SensorSpec, resolution: float, yaw_bins: int = 8,
                   ray_stride: int = 2, **kw) -> "UtilityParams":
        bound = max_gain_bound(spec, resolution, yaw_grid(yaw_bins), ray_stride)
        return cls(i_max=float(bound), yaw_bins=yaw_bins, ray_stride=ray_stride, **kw)


class PositionNotFree(ValueError):
    pass


@dataclass(frozen=True)
class _RayTemplate:
    """Voxels crossed by the sensor rays cast from the center of voxel (0, 0, 0).

    Per ray, ``ox/oy/oz`` are the voxel offsets in traversal order,
    ``in_range`` flags voxels whose interval midpoint lies within
    [min_range, max_range], and ``valid`` marks real (non-padding) entries.
    """

    ox: np.ndarray
    oy: np.ndarray
    oz: np.ndarray
    in_range: np.ndarray
    valid: np.ndarray


@lru_cache(maxsize=512)
def _ray_template(spec: SensorSpec, resolution: float, yaw: float, stride: int) -> _RayTemplate:
    dirs = world_directions(Pose((0.0, 0.0, 0.0), yaw), spec, resolution, stride)
    origins = np.full(dirs.shape, 0.5)
    vox, t0, t1, valid = traverse(origins, dirs, np.full(dirs.shape[0], spec.max_range / resolution))
    mid = 0.5 * (t0 + t1) * resolution
    in_range = valid & (mid >= spec.min_range) & (mid <= spec.max_range)
    parts = [vox[:, :, a].astype(np.int32) for a in range(3)]
    tpl = _RayTemplate(*parts, in_range, valid)
    for arr in (tpl.ox, tpl.oy, tpl.oz, tpl.in_range, tpl.valid):
        arr.setflags(write=False)
    return tpl


@lru_cache(maxsize=512)
def _relative_keys(spec: SensorSpec, resolution: float, yaw: float, stride: int,
                   strides: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Template voxels as flat-key offsets; padding entries point at the origin voxel."""
    t = _ray_template(spec, resolution, yaw, stride)
    sx, sy, sz = strides
    rel = t.ox.astype(np.int64) * sx + t.oy.astype(np.int64) * sy + t.oz.astype(np.int64) * sz
    rel[~t.valid] = 0
    rel.setflags(write=False)
    return rel, t.in_range


def _gain_counts(vmap: VoxelMap, position, yaws: Sequence[float], spec: SensorSpec,
                 stride: int) -> list[int]:
    """Gain per yaw; rays start at the center of the voxel holding ``position``.

    A ray steps at most one voxel per axis at a time, so before leaving the
    grid it always lands in the OUTSIDE border of the padded array, where it
    stops just as it would at an Occupied voxel.  Entries after the stop may
    alias arbitrary keys but are never counted.
    """
    geo = vmap.geometry
    base_key = geo.key(geo.world_to_index(position))
    flat = vmap.flat
    mark = np.zeros(flat.size, dtype=bool)
    out = []
    for yaw in yaws:
        rel, in_range = _relative_keys(spec, geo.resolution, float(yaw), stride, tuple(geo.strides))
        if rel.shape[1] == 0:
            out.append(0)
            continue
        keys = rel + base_key
        st = flat.take(keys, mode="clip")
        open_ = np.logical_and.accumulate((st != OCCUPIED) & (st != OUTSIDE), axis=1)
        counted = keys[in_range & open_ & (st == UNKNOWN)]
        mark[counted] = True
        out.append(int(np.count_nonzero(mark)))
        mark[counted] = False
    return out


def voxel_gain(vmap: VoxelMap, position, yaw: float, spec: SensorSpec, stride: int = 1) -> int:
    """Unknown voxels visible from a pose.

    Sensor rays are cast from the center of the voxel containing
    ``position``; each ray counts the Unknown voxels in [min, max] range
    before its first Occupied voxel, and every voxel counts once.
    """
    if not _is_free(vmap, position):
        raise PositionNotFree(f"{tuple(position)} is not in free space")
    return _gain_counts(vmap, position, [yaw], spec, stride)[0]


def yaw_grid(k: int) -> list[float]:
    """Uniform yaws ``2*pi*i/k``, i = 0..k-1 (search order, ties keep the first)."""
    return [2.0 * math.pi * i / k for i in range(k)]


def optimize_yaw(vmap: VoxelMap, position, spec: SensorSpec, k: int = 8,
                 stride: int = 1) -> tuple[float, int]:
    """Best of ``k`` uniformly spaced yaws; ties go to the earliest bin."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not _is_free(vmap, position):
        raise PositionNotFree(f"{tuple(position)} is not in free space")
    yaws = yaw_grid(k)
    gains = _gain_counts(vmap, position, yaws, spec, stride)
    best = max(range(k), key=lambda i: (gains[i], -i))
    return normalize_yaw(yaws[best]), gains[best]


def _is_free(vmap: VoxelMap, p) -> bool:
    geo = vmap.geometry
    idx = geo.world_to_index(p)
    return geo.in_bounds(idx) and vmap.flat[geo.key(idx)] == FREE


class GainCache:
    """Yaw-optimized gains memoized per node.

    A node's gain depends only on voxels within sensor reach of it, so after
    each map update :meth:`invalidate` drops just the entries near changed
    voxels; every other entry still equals a fresh evaluation.
    """

    def __init__(self, vmap: VoxelMap, graph: RoadMap, spec: SensorSpec, params: UtilityParams):
        self.vmap = vmap
        self.graph = graph
        self.spec = spec
        self.params = params
        self.evaluations = 0
        self._memo: dict[int, tuple[float, float]] = {}
        # ray origin is a voxel center, counted voxels have their midpoint in range
        self.reach = spec.max_range + math.sqrt(3.0) * vmap.geometry.resolution

    def __len__(self) -> int:
        return len(self._memo)

    def clear(self) -> None:
        self._memo = {}

    def invalidate(self, changed_keys: np.ndarray) -> None:
        changed_keys = np.asarray(changed_keys, dtype=np.int64)
        if not self._memo or changed_keys.size == 0:
            return
        geo = self.vmap.geometry
        nodes = [n for n in self._memo if n in self.graph.positions]
        stale = set(self._memo) - set(nodes)
        if nodes:
            tree = cKDTree(geo.centers(geo.indices(changed_keys)))
            pts = np.array([geo.center(geo.world_to_index(self.graph.positions[n])) for n in nodes])
            dist, _ = tree.query(pts, distance_upper_bound=self.reach)
            stale.update(n for n, d in zip(nodes, dist) if np.isfinite(d))
        for n in stale:
            del self._memo[n]

    def __call__(self, node: int) -> tuple[float, float]:
        hit = self._memo.get(node)
        if hit is None:
            hit = optimize_yaw(self.vmap, self.graph.positions[node], self.spec,
                               self.params.yaw_bins, self.params.ray_stride)
            self.evaluations += 1
            if hit[1] > self.params.i_max:
                raise AssertionError(f"gain {hit[1]} exceeds i_max {self.params.i_max}")
            self._memo[node] = hit
        return hit


@dataclass
class CandidatePlan:
    node: int
    frontier_ids: list[int]
    yaw: float
    gain: float
    path: list[int]  # node sequence from the robot anchor to the candidate
    distance: float
    cost: float
    utility: float
    target: Optional[np.ndarray] = None  # frontier point the candidate observes


@dataclass
class PlanResult:
    best: Optional[CandidatePlan]
    total_candidates: int
    evaluated: int
    settled: int
    radius_trace: list[float] = field(default_factory=list)
    elapsed: float = 0.0

    def to_record(self) -> dict:
        b = self.best
        return {"candidates": self.total_candidates, "evaluated": self.evaluated,
                "settled": self.settled,
                "utility": None if b is None else b.utility,
                "target": None if b is None else b.node,
                "radius": [None if math.isinf(r) else r for r in self.radius_trace]}


def _better(u: float, node: int, best: Optional[tuple[float, int]]) -> bool:
    return best is None or u > best[0] or (u == best[0] and node < best[1])


def group_candidates(candidates: Sequence[Candidate]) -> dict[int, list[int]]:
    """Reachable candidate nodes -> frontier ids they serve."""
    out: dict[int, list[int]] = {}
    for c in candidates:
        if c.node is not None:
            out.setdefault(c.node, []).append(c.frontier_id)
    return out


def anchor(graph: RoadMap, position, vmap: Optional[VoxelMap], d_max: float, k: int = 10):
    """Join the robot position to the graph.

    Returns ``(source node, temporary node or None)``.  When the robot sits on
    a node that node is the source; otherwise a temporary node is linked to
    up to ``k`` visible nodes within ``d_max`` (or to the nearest node).
    """
    position = np.asarray(position, dtype=float)
    nearest = graph.nearest(position)
    if nearest is not None and nearest[0] < 1e-9:
        return nearest[1], None
    tmp = graph.add_node(position)
    linked = 0
    for d, nid in graph.near(position, d_max):
        if nid == tmp:
            continue
        if vmap is None or segment_free(vmap, position, graph.positions[nid]):
            graph.add_edge(tmp, nid)
            linked += 1
            if linked >= k:
                break
    if not linked:
        others = [(d, n) for d, n in ((float(np.linalg.norm(p - position)), n)
                                      for n, p in graph.positions.items()) if n != tmp]
        if others:
            graph.add_edge(tmp, min(others)[1])
    return tmp, tmp


def plan(graph: RoadMap, candidates: Sequence[Candidate], robot_position, vmap: Optional[VoxelMap],
         params: UtilityParams, gain_fn: GainFn, d_max: float = 1.5) -> PlanResult:
    """Best candidate by utility using Dijkstra with a shrinking search radius.

    Gains are only computed for candidates as Dijkstra settles them.  After
    each improvement the radius drops to the largest distance at which a
    candidate with gain ``i_max`` could still match the incumbent, and the
    search stops once the nearest unsettled node lies beyond it.
    """
    t_start = time.perf_counter()
    cand = group_candidates(candidates)
    source, tmp = anchor(graph, robot_position, vmap, d_max)
    try:
        radius = math.inf
        trace = [radius]
        best: Optional[tuple[float, int]] = None
        best_info = None
        dist = {source: 0.0}
        prev: dict[int, int] = {}
        heap = [(0.0, source)]
        done = set()
        evaluated = 0
        while heap:
            d, u = heapq.heappop(heap)
            if u in done:
                continue
            if d > radius * (1.0 + 1e-12) + 1e-12:
                break
            done.add(u)
            if u in cand:
                yaw, gain = gain_fn(u)
                evaluated += 1
                u_val = utility(gain, params.lam * d)
                if u_val > 0 and _better(u_val, u, best):
                    best = (u_val, u)
                    best_info = (yaw, gain, d)
                    radius = radius_bound(u_val, params.i_max, params.lam)
                    trace.append(radius)
            for v, w in graph.adj[u].items():
                nd = d + w
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    prev[v] = u
                    heapq.heappush(heap, (nd, v))
        result = None
        if best is not None:
            node = best[1]
            path = [node]
            while path[-1] != source:
                path.append(prev[path[-1]])
            path.reverse()
            if tmp is not None:
                path = path[1:]
            yaw, gain, d = best_info
            fids = sorted(cand[node])
            target = next((c.target for c in candidates if c.node == node), None)
            result = CandidatePlan(node=node, frontier_ids=fids, yaw=yaw, gain=gain, path=path,
                                   distance=d, cost=params.lam * d, utility=best[0], target=target)
        return PlanResult(best=result, total_candidates=len(cand), evaluated=evaluated,
                          settled=len(done), radius_trace=trace,
                          elapsed=time.perf_counter() - t_start)
    finally:
        if tmp is not None:
            graph.remove_node(tmp)


# -- second stage: shortcutting and timing -----------------------------------

def trapezoid_time(length: float, v_max: float, a_max: float) -> float:
    """Rest-to-rest traversal time under velocity and acceleration limits."""
    if length <= 0:
        return 0.0
    if length >= v_max * v_max / a_max:
        return length / v_max + v_max / a_max
    return 2.0 * math.sqrt(length / a_max)


def trapezoid_peak_speed(length: float, v_max: float, a_max: float) -> float:
    return min(v_max, math.sqrt(max(length, 0.0) * a_max))


@dataclass
class SmoothedPath:
    points: np.ndarray  # (n, 3)
    yaws: list[float]
    durations: list[float]  # per segment

    @property
    def total_duration(self) -> float:
        return float(sum(self.durations))

    @property
    def length(self) -> float:
        return path_length(self.points)


def path_length(points) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def shortcut(points, vmap: VoxelMap, iterations: int = 50, seed: int = 0) -> np.ndarray:
    """Randomized-pair shortcutting; keeps endpoints and only adds collision-free segments."""
    pts = [np.asarray(p, dtype=float) for p in points]
    rng = np.random.default_rng(seed)
    for _ in range(iterations):
        if len(pts) < 3:
            break
        i = int(rng.integers(0, len(pts) - 2))
        j = int(rng.integers(i + 2, len(pts)))
        if segment_free(vmap, pts[i], pts[j]):
            pts = pts[:i + 1] + pts[j:]
    return np.array(pts).reshape(-1, 3)


def smooth(points, vmap: VoxelMap, iterations: int = 50, seed: int = 0, v_max: float = 1.0,
           a_max: float = 1.0, final_yaw: Optional[float] = None) -> SmoothedPath:
    """Shortcut a collision-free polyline and time it with trapezoidal profiles."""
    pts = shortcut(points, vmap, iterations, seed)
    yaws = []
    for n in range(len(pts)):
        if n + 1 < len(pts):
            d = pts[n + 1] - pts[n]
        elif n > 0:
            d = pts[n] - pts[n - 1]
        else:
            d = np.array([1.0, 0.0, 0.0])
        yaws.append(normalize_yaw(math.atan2(d[1], d[0])) if np.hypot(d[0], d[1]) > 1e-12 else 0.0)
    if final_yaw is not None and len(yaws):
        yaws[-1] = normalize_yaw(final_yaw)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1) if len(pts) > 1 else np.zeros(0)
    durations = [trapezoid_time(float(s), v_max, a_max) for s in seg]
    return SmoothedPath(points=pts, yaws=yaws, durations=durations)
