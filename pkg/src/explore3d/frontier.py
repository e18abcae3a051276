"""Incremental FOV-based frontier detection (F3D).

The detector keeps a :class:`FrontierStore` between calls.  Each call
consumes the FOV records captured since the previous call together with the
map journal for the same interval, and touches only that region of interest.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .voxel_map import FREE, OCCUPIED, OUTSIDE, UNKNOWN, Aabb, GridGeometry, VoxelMap

NO_OWNER = -1
PENDING = -2  # claimed by an extraction in progress, not yet a stored frontier

DEFAULT_N_MAX = 200


@dataclass
class Frontier:
    id: int
    keys: np.ndarray  # sorted member keys
    centroid: np.ndarray  # meters
    aabb: Aabb

    @property
    def size(self) -> int:
        return int(self.keys.size)


class FrontierStore:
    """Active frontiers plus the voxel-level frontierSet.

    ``owner[key]`` is the id of the frontier holding voxel ``key`` (the
    back-reference); a voxel is in frontierSet iff its owner is not
    ``NO_OWNER``.
    """

    def __init__(self, geometry: GridGeometry):
        self.geometry = geometry
        self.frontiers: dict[int, Frontier] = {}
        self.owner = np.full(geometry.padded_size, NO_OWNER, dtype=np.int64)
        self.journal_cursor = 0
        self.last_scan_id = -1
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.frontiers)

    def frontier_keys(self) -> np.ndarray:
        """Sorted keys of all voxels in frontierSet."""
        return np.flatnonzero(self.owner != NO_OWNER)

    def add(self, keys: np.ndarray) -> Frontier:
        keys = np.sort(np.asarray(keys, dtype=np.int64))
        idx = self.geometry.indices(keys)
        f = Frontier(id=self._next_id, keys=keys,
                     centroid=self.geometry.centers(idx).mean(axis=0),
                     aabb=Aabb.from_indices(idx))
        self._next_id += 1
        self.frontiers[f.id] = f
        self.owner[keys] = f.id
        return f

    def remove(self, fid: int) -> np.ndarray:
        f = self.frontiers.pop(fid)
        self.owner[f.keys] = NO_OWNER
        return f.keys

    def check(self) -> None:
        """Raise AssertionError when frontierSet and the frontier list disagree."""
        total = 0
        for f in self.frontiers.values():
            assert np.all(self.owner[f.keys] == f.id), f"stale back-reference in frontier {f.id}"
            total += f.size
        assert total == int(np.count_nonzero(self.owner != NO_OWNER)), "orphan voxels in frontierSet"


@dataclass
class DetectionReport:
    new_frontiers: list[Frontier] = field(default_factory=list)
    removed: list[int] = field(default_factory=list)
    scanned: int = 0  # ROI voxels visited by the scan loop
    examined: int = 0  # frontier-status evaluations, including extraction and recheck
    elapsed: float = 0.0  # seconds
    changed_keys: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    lost_free_keys: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    lost_occupied_keys: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    max_examinations: int = 0  # only filled when instrumented

    def to_record(self) -> dict:
        return {"new": len(self.new_frontiers), "removed": len(self.removed),
                "scanned": self.scanned, "examined": self.examined}


class ChronologyError(ValueError):
    pass


class _Examiner:
    """Memoized frontier-status lookups for one detect call."""

    def __init__(self, vmap: VoxelMap, counter: Optional[np.ndarray]):
        self.vmap = vmap
        self.status: dict[int, bool] = {}
        self.counter = counter
        self.count = 0
        self._flat = memoryview(vmap.flat)
        self._off6 = [int(o) for o in vmap.geometry.offsets6]

    def bulk(self, keys: np.ndarray) -> np.ndarray:
        flags = self.vmap.frontier_mask(keys)
        self.status.update(zip(keys.tolist(), flags.tolist()))
        self.count += int(keys.size)
        if self.counter is not None:
            np.add.at(self.counter, keys, 1)
        return flags

    def __call__(self, key: int) -> bool:
        s = self.status.get(key)
        if s is None:
            flat = self._flat
            s = flat[key] == FREE and any(flat[key + o] == UNKNOWN for o in self._off6)
            self.status[key] = s
            self.count += 1
            if self.counter is not None:
                self.counter[key] += 1
        return s


def _extract(seed: int, owner: np.ndarray, examine: _Examiner, off26: Sequence[int]) -> list[int]:
    """BFS over 26-connected frontier voxels not yet in frontierSet.

    Non-frontier voxels met on the way are recorded as examined (closed);
    frontier voxels are claimed as PENDING in ``owner``.
    """
    members = []
    queue = deque([seed])
    status = examine.status
    while queue:
        v = queue.popleft()
        if owner[v] != NO_OWNER or status.get(v) is False:
            continue
        if not examine(v):
            continue
        owner[v] = PENDING
        members.append(v)
        for o in off26:
            n = v + o
            if owner[n] == NO_OWNER and status.get(n) is not False:
                queue.append(n)
    return members


def extract_frontier(seed, vmap: VoxelMap, store: FrontierStore,
                     closed: Optional[set] = None) -> set[int]:
    """Maximal 26-connected set of frontier voxels reachable from ``seed``.

    ``seed`` may be an index triple or a key.  Voxels in ``closed`` or already
    in frontierSet are excluded.  The returned keys are added to frontierSet
    as pending members (not yet grouped into a stored frontier); examined
    non-frontier voxels are added to ``closed``.
    """
    geo = vmap.geometry
    key = seed if isinstance(seed, (int, np.integer)) else geo.key(seed)
    key = int(key)
    closed = set() if closed is None else closed
    if key in closed or store.owner[key] != NO_OWNER or not vmap.is_frontier_key(key):
        raise ValueError("seed must be a frontier voxel outside closedSet and frontierSet")
    examine = _Examiner(vmap, None)
    examine.status.update((k, False) for k in closed)
    members = _extract(key, store.owner, examine, [int(o) for o in geo.offsets26])
    closed.update(k for k, s in examine.status.items() if s is False)
    return set(members)


def _components(keys: np.ndarray, geometry: GridGeometry) -> list[np.ndarray]:
    """Split a key set into 26-connected components (sorted by smallest key)."""
    remaining = set(keys.tolist())
    off26 = [int(o) for o in geometry.offsets26]
    comps = []
    for k in sorted(remaining):
        if k not in remaining:
            continue
        remaining.discard(k)
        comp = [k]
        queue = deque([k])
        while queue:
            v = queue.popleft()
            for o in off26:
                n = v + o
                if n in remaining:
                    remaining.discard(n)
                    comp.append(n)
                    queue.append(n)
        comps.append(np.sort(np.array(comp, dtype=np.int64)))
    return comps


def split_cluster(keys: np.ndarray, geometry: GridGeometry, n_max: int) -> list[np.ndarray]:
    """Bisect a cluster at the midpoint of its longest box axis until every piece has <= n_max voxels."""
    keys = np.sort(np.asarray(keys, dtype=np.int64))
    if keys.size <= n_max:
        return [keys]
    idx = geometry.indices(keys)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0)
    axis = int(np.argmax(hi - lo))
    mid = 0.5 * (lo[axis] + hi[axis])
    left = idx[:, axis] <= mid
    out = []
    for half in (keys[left], keys[~left]):
        for comp in _components(half, geometry):
            out.extend(split_cluster(comp, geometry, n_max))
    return out


def process_frontiers(clusters: Iterable[np.ndarray], geometry: GridGeometry,
                      n_max: int = DEFAULT_N_MAX) -> list[np.ndarray]:
    """Split oversized clusters; returns member-key arrays ready to be stored."""
    if n_max < 1:
        raise ValueError("n_max must be positive")
    out = []
    for c in clusters:
        out.extend(split_cluster(np.asarray(c, dtype=np.int64), geometry, n_max))
    return out


def _boxes_overlap(box: Aabb, lo: np.ndarray, hi: np.ndarray) -> bool:
    if lo.shape[0] == 0:
        return False
    return bool(np.any(np.all((lo <= np.array(box.hi)) & (np.array(box.lo) <= hi), axis=1)))


def detect(vmap: VoxelMap, fovs: Sequence, store: FrontierStore, n_max: int = DEFAULT_N_MAX,
           instrument: bool = False, acknowledge: bool = True) -> DetectionReport:
    """Update ``store`` with the frontiers of the current map.

    ``fovs`` must be the FOV records captured since the previous call, in
    capture order; the map journal since ``store.journal_cursor`` must cover
    the same interval.
    """
    t_start = time.perf_counter()
    geo = vmap.geometry
    last = store.last_scan_id
    for fov in fovs:
        if fov.scan_id <= last:
            raise ChronologyError(f"FOV scan {fov.scan_id} is not after scan {last}")
        last = fov.scan_id

    keys, old, new, _ = vmap.changes_since(store.journal_cursor)
    store.journal_cursor = vmap.journal_end
    store.last_scan_id = last
    report = DetectionReport()
    if acknowledge:
        vmap.acknowledge(store.journal_cursor)
    if not len(fovs) and keys.size == 0:
        report.elapsed = time.perf_counter() - t_start
        return report

    changed = np.unique(keys)
    report.changed_keys = changed
    was_free = keys[old == FREE]
    if was_free.size:
        report.lost_free_keys = np.unique(was_free[vmap.flat[was_free] != FREE])
    was_occ = keys[old == OCCUPIED]
    if was_occ.size:
        report.lost_occupied_keys = np.unique(was_occ[vmap.flat[was_occ] != OCCUPIED])
    # Frontier status can only move where a voxel or one of its 6-neighbors changed.
    affected = np.unique(np.concatenate([changed] + [changed + o for o in geo.offsets6]))
    affected = affected[vmap.flat[affected] != OUTSIDE]
    owners = store.owner[affected]
    dirty = set(np.unique(owners[owners >= 0]).tolist())

    fov_boxes = [f.aabb for f in fovs if f.aabb is not None]
    lo = np.array([b.lo for b in fov_boxes], dtype=np.int64).reshape(-1, 3)
    hi = np.array([b.hi for b in fov_boxes], dtype=np.int64).reshape(-1, 3)

    # old frontiers intersecting the recorded FOVs that contain a changed voxel
    delete_parts = []
    for fid in sorted(dirty):
        f = store.frontiers.get(fid)
        if f is not None and _boxes_overlap(f.aabb, lo, hi):
            delete_parts.append(store.remove(fid))
            report.removed.append(fid)

    # region of interest: FOV voxels, each visited once, plus the change halo
    counter = np.zeros(geo.padded_size, dtype=np.int32) if instrument else None
    visited = np.zeros(geo.padded_size, dtype=bool)
    roi_parts = []
    changed_idx = geo.indices(changed) if changed.size else np.zeros((0, 3), dtype=np.int64)
    for fov in fovs:
        if fov.aabb is None or not fov.aabb.contains_many(changed_idx).any():
            continue  # nothing in this FOV changed
        part = fov.region[~visited[fov.region]]
        visited[part] = True
        roi_parts.append(part)
    halo = affected[~visited[affected]]
    visited[halo] = True
    roi_parts.append(halo)
    roi = np.concatenate(roi_parts) if roi_parts else np.zeros(0, dtype=np.int64)
    report.scanned = int(roi.size)

    # remaining dirty frontiers touching the ROI or its neighbors
    leftover = [fid for fid in sorted(dirty) if fid in store.frontiers]
    if leftover:
        near = np.unique(np.concatenate([roi] + [roi + o for o in geo.offsets6]))
        near_owners = set(np.unique(store.owner[near]).tolist())
        for fid in leftover:
            if fid in near_owners:
                delete_parts.append(store.remove(fid))
                report.removed.append(fid)

    examine = _Examiner(vmap, counter)
    owner = store.owner
    off26 = [int(o) for o in geo.offsets26]
    clusters = []
    flags = examine.bulk(roi)
    for seed in roi[flags].tolist():
        if owner[seed] == NO_OWNER:
            clusters.append(_extract(seed, owner, examine, off26))

    # recheck voxels of removed frontiers
    if delete_parts:
        for v in np.concatenate(delete_parts).tolist():
            if owner[v] == NO_OWNER and examine(v):
                clusters.append(_extract(v, owner, examine, off26))

    for members in process_frontiers(clusters, geo, n_max):
        report.new_frontiers.append(store.add(members))

    report.examined = examine.count
    if counter is not None:
        report.max_examinations = int(counter.max()) if counter.size else 0
    report.elapsed = time.perf_counter() - t_start
    return report
