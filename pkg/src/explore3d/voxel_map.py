"""Ternary 3-D occupancy grid with a change journal.

Voxels are addressed two ways: by index triple ``(i, j, k)`` in the public
API, and internally by an integer *key*, the flat offset into a grid padded
with a one-voxel border.  The border holds a sentinel state that is never
Unknown, so vectorized neighbor lookups need no bounds checks.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .raycast import clip_lengths, traverse


class VoxelState(enum.IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


UNKNOWN = int(VoxelState.UNKNOWN)
FREE = int(VoxelState.FREE)
OCCUPIED = int(VoxelState.OCCUPIED)
OUTSIDE = 3  # border sentinel, never exposed

_HIT_EPS = 1e-6


class OutOfBoundsError(IndexError):
    pass


@dataclass(frozen=True)
class Aabb:
    """Inclusive axis-aligned box in voxel-index space."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        if any(a > b for a, b in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate Aabb {self.lo} > {self.hi}")

    @classmethod
    def from_indices(cls, idx: np.ndarray) -> "Aabb":
        idx = np.asarray(idx).reshape(-1, 3)
        lo = idx.min(axis=0)
        hi = idx.max(axis=0)
        return cls(tuple(int(v) for v in lo), tuple(int(v) for v in hi))

    def intersects(self, other: "Aabb") -> bool:
        return all(a_lo <= b_hi and b_lo <= a_hi
                   for a_lo, a_hi, b_lo, b_hi in zip(self.lo, self.hi, other.lo, other.hi))

    def merge(self, other: "Aabb") -> "Aabb":
        return Aabb(tuple(min(a, b) for a, b in zip(self.lo, other.lo)),
                    tuple(max(a, b) for a, b in zip(self.hi, other.hi)))

    def contains(self, p: Sequence[int]) -> bool:
        return all(lo <= v <= hi for lo, v, hi in zip(self.lo, p, self.hi))

    def contains_many(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx).reshape(-1, 3)
        return np.all((idx >= np.array(self.lo)) & (idx <= np.array(self.hi)), axis=1)

    def grow(self, pad: int) -> "Aabb":
        return Aabb(tuple(v - pad for v in self.lo), tuple(v + pad for v in self.hi))

    def clip(self, dims: Sequence[int]) -> Optional["Aabb"]:
        lo = tuple(max(0, v) for v in self.lo)
        hi = tuple(min(d - 1, v) for d, v in zip(dims, self.hi))
        if any(a > b for a, b in zip(lo, hi)):
            return None
        return Aabb(lo, hi)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(b - a + 1 for a, b in zip(self.lo, self.hi))

    @property
    def volume(self) -> int:
        sx, sy, sz = self.shape
        return sx * sy * sz

    def as_array(self) -> np.ndarray:
        return np.array([self.lo, self.hi], dtype=np.int64)


@dataclass(frozen=True)
class GridGeometry:
    """Placement of a voxel grid in the world plus key arithmetic."""

    origin: tuple[float, float, float]
    resolution: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        if len(self.dims) != 3 or any(int(d) <= 0 for d in self.dims):
            raise ValueError(f"dims must be three positive integers, got {self.dims}")

    @property
    def padded(self) -> tuple[int, int, int]:
        return tuple(d + 2 for d in self.dims)

    @property
    def strides(self) -> tuple[int, int, int]:
        _, py, pz = self.padded
        return (py * pz, pz, 1)

    @property
    def size(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def padded_size(self) -> int:
        px, py, pz = self.padded
        return px * py * pz

    @property
    def offsets6(self) -> np.ndarray:
        sx, sy, sz = self.strides
        return np.array([sx, -sx, sy, -sy, sz, -sz], dtype=np.int64)

    @property
    def offsets26(self) -> np.ndarray:
        sx, sy, sz = self.strides
        out = [dx * sx + dy * sy + dz * sz
               for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
               if (dx, dy, dz) != (0, 0, 0)]
        return np.array(out, dtype=np.int64)

    def in_bounds(self, p: Sequence[int]) -> bool:
        return all(0 <= int(v) < d for v, d in zip(p, self.dims))

    def in_bounds_many(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx).reshape(-1, 3)
        return np.all((idx >= 0) & (idx < np.array(self.dims)), axis=1)

    def key(self, p: Sequence[int]) -> int:
        if not self.in_bounds(p):
            raise OutOfBoundsError(f"voxel {tuple(p)} outside dims {self.dims}")
        sx, sy, _ = self.strides
        return (int(p[0]) + 1) * sx + (int(p[1]) + 1) * sy + int(p[2]) + 1

    def keys(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 3)
        sx, sy, _ = self.strides
        return (idx[:, 0] + 1) * sx + (idx[:, 1] + 1) * sy + idx[:, 2] + 1

    def index(self, key: int) -> tuple[int, int, int]:
        sx, sy, _ = self.strides
        x, r = divmod(int(key), sx)
        y, z = divmod(r, sy)
        return (x - 1, y - 1, z - 1)

    def indices(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        sx, sy, _ = self.strides
        x, r = np.divmod(keys, sx)
        y, z = np.divmod(r, sy)
        return np.stack([x - 1, y - 1, z - 1], axis=-1)

    def box_keys(self, box: Aabb) -> np.ndarray:
        """Keys of every voxel in ``box`` (C order)."""
        sx, sy, _ = self.strides
        xs = np.arange(box.lo[0], box.hi[0] + 1, dtype=np.int64) + 1
        ys = np.arange(box.lo[1], box.hi[1] + 1, dtype=np.int64) + 1
        zs = np.arange(box.lo[2], box.hi[2] + 1, dtype=np.int64) + 1
        return (xs[:, None, None] * sx + ys[None, :, None] * sy + zs[None, None, :]).ravel()

    def to_grid(self, points: np.ndarray) -> np.ndarray:
        """World coordinates (meters) to continuous grid units."""
        return (np.asarray(points, dtype=float) - np.asarray(self.origin)) / self.resolution

    def world_to_index(self, point: Sequence[float]) -> tuple[int, int, int]:
        g = self.to_grid(point)
        return tuple(int(math.floor(v)) for v in g)

    def centers(self, idx: np.ndarray) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(idx, dtype=float) + 0.5) * self.resolution

    def center(self, p: Sequence[int]) -> np.ndarray:
        return self.centers(np.asarray(p, dtype=float))


@dataclass
class _JournalChunk:
    keys: np.ndarray
    old: np.ndarray
    new: np.ndarray
    scan_id: int


class VoxelMap:
    """Bounded ternary occupancy grid.

    Every mutation is appended to ``journal``; consumers keep an integer
    cursor (see :attr:`journal_end`) and pull changes with
    :meth:`changes_since`.  Entries are only discarded through
    :meth:`acknowledge`.
    """

    def __init__(self, origin: Sequence[float], resolution: float, dims: Sequence[int]):
        self.geometry = GridGeometry(tuple(float(v) for v in origin), float(resolution),
                                     tuple(int(d) for d in dims))
        self._grid = np.full(self.geometry.padded, OUTSIDE, dtype=np.uint8)
        self._grid[1:-1, 1:-1, 1:-1] = UNKNOWN
        self.flat = self._grid.reshape(-1)
        self._chunks: list[_JournalChunk] = []
        self._journal_base = 0  # sequence number of the first retained entry
        self._journal_len = 0

    @classmethod
    def from_geometry(cls, geometry: GridGeometry) -> "VoxelMap":
        return cls(geometry.origin, geometry.resolution, geometry.dims)

    # -- basic properties -------------------------------------------------
    @property
    def origin(self):
        return self.geometry.origin

    @property
    def resolution(self) -> float:
        return self.geometry.resolution

    @property
    def dims(self):
        return self.geometry.dims

    @property
    def states(self) -> np.ndarray:
        """Unpadded (nx, ny, nz) view of voxel states."""
        return self._grid[1:-1, 1:-1, 1:-1]

    def copy(self) -> "VoxelMap":
        other = VoxelMap.from_geometry(self.geometry)
        other._grid[...] = self._grid
        return other

    def counts(self) -> dict[VoxelState, int]:
        hist = np.bincount(self.states.ravel(), minlength=3)
        return {s: int(hist[int(s)]) for s in VoxelState}

    # -- point queries ----------------------------------------------------
    def state_at(self, p: Sequence[int]) -> VoxelState:
        return VoxelState(int(self.flat[self.geometry.key(p)]))

    def set_state(self, p: Sequence[int], state: VoxelState, scan_id: int = -1) -> bool:
        """Set one voxel; returns True when the label actually changed."""
        key = self.geometry.key(p)
        return bool(self.set_states(np.array([key]), int(state), scan_id))

    def set_states(self, keys: np.ndarray, state: int, scan_id: int = -1) -> int:
        """Set many voxels (given by key) to one state, journaling changes."""
        keys = np.unique(np.asarray(keys, dtype=np.int64))
        if keys.size == 0:
            return 0
        old = self.flat[keys]
        if np.any(old == OUTSIDE):
            raise OutOfBoundsError("key refers to the padding border")
        changed = old != state
        keys = keys[changed]
        if keys.size:
            self._append(keys, old[changed], np.full(keys.size, state, dtype=np.uint8), scan_id)
            self.flat[keys] = state
        return int(keys.size)

    def neighbors6(self, p: Sequence[int]) -> list[tuple[int, int, int]]:
        self.geometry.key(p)
        x, y, z = (int(v) for v in p)
        cand = [(x + 1, y, z), (x - 1, y, z), (x, y + 1, z), (x, y - 1, z),
                (x, y, z + 1), (x, y, z - 1)]
        return [q for q in cand if self.geometry.in_bounds(q)]

    def neighbors26(self, p: Sequence[int]) -> list[tuple[int, int, int]]:
        self.geometry.key(p)
        x, y, z = (int(v) for v in p)
        out = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dz in (-1, 0, 1):
                    if dx or dy or dz:
                        q = (x + dx, y + dy, z + dz)
                        if self.geometry.in_bounds(q):
                            out.append(q)
        return out

    def is_frontier_voxel(self, p: Sequence[int]) -> bool:
        return self.is_frontier_key(self.geometry.key(p))

    def is_frontier_key(self, key: int) -> bool:
        flat = self.flat
        if flat[key] != FREE:
            return False
        return any(flat[key + off] == UNKNOWN for off in self.geometry.offsets6)

    def frontier_mask(self, keys: np.ndarray) -> np.ndarray:
        """Vectorized frontier-voxel test for an array of keys."""
        keys = np.asarray(keys, dtype=np.int64)
        flat = self.flat
        out = flat[keys] == FREE
        if not out.any():
            return out
        cand = keys[out]
        unk = np.zeros(cand.size, dtype=bool)
        for off in self.geometry.offsets6:
            unk |= flat[cand + off] == UNKNOWN
        out[out] = unk
        return out

    # -- journal ----------------------------------------------------------
    def _append(self, keys, old, new, scan_id):
        self._chunks.append(_JournalChunk(keys, np.asarray(old, dtype=np.uint8),
                                          np.asarray(new, dtype=np.uint8), int(scan_id)))
        self._journal_len += int(keys.size)

    @property
    def journal_end(self) -> int:
        """Sequence number one past the newest journal entry."""
        return self._journal_base + self._journal_len

    @property
    def journal_start(self) -> int:
        return self._journal_base

    def journal_entries(self) -> Iterator[tuple[tuple[int, int, int], VoxelState, VoxelState, int]]:
        """Yield retained entries as ``(voxel index, old, new, scan id)``."""
        for ch in self._chunks:
            idx = self.geometry.indices(ch.keys)
            for p, o, n in zip(idx, ch.old, ch.new):
                yield (tuple(int(v) for v in p), VoxelState(int(o)), VoxelState(int(n)), ch.scan_id)

    def changes_since(self, cursor: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Journal entries with sequence number >= cursor.

        Returns ``(keys, old, new, scan_ids)`` arrays in journal order.
        """
        if cursor < self._journal_base:
            raise ValueError("journal entries before cursor were already acknowledged")
        seq = self._journal_base
        parts = []
        for ch in self._chunks:
            n = ch.keys.size
            if seq + n > cursor:
                start = max(0, cursor - seq)
                parts.append((ch.keys[start:], ch.old[start:], ch.new[start:],
                              np.full(n - start, ch.scan_id, dtype=np.int64)))
            seq += n
        if not parts:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.astype(np.uint8), empty.astype(np.uint8), empty
        return tuple(np.concatenate(col) for col in zip(*parts))

    def acknowledge(self, cursor: int) -> None:
        """Drop journal entries older than ``cursor``."""
        cursor = min(cursor, self.journal_end)
        while self._chunks and self._journal_base + self._chunks[0].keys.size <= cursor:
            n = self._chunks.pop(0).keys.size
            self._journal_base += n
            self._journal_len -= n
        if self._chunks and cursor > self._journal_base:
            ch = self._chunks[0]
            cut = cursor - self._journal_base
            self._chunks[0] = _JournalChunk(ch.keys[cut:], ch.old[cut:], ch.new[cut:], ch.scan_id)
            self._journal_base += cut
            self._journal_len -= cut

    # -- scan integration -------------------------------------------------
    def integrate_scan(self, scan, scan_id: int) -> Optional[Aabb]:
        """Ray-cast a depth scan into the map.

        Voxels strictly before a hit become Free and the hit voxel becomes
        Occupied; rays without a hit free everything up to max range.  When
        one scan both frees and hits a voxel, Occupied wins.  Returns the
        tight box of changed voxels, or None when nothing changed.
        """
        geo = self.geometry
        use = np.asarray(scan.valid, dtype=bool)
        if not use.any():
            return None
        dirs = np.asarray(scan.directions, dtype=float)[use]
        dist = np.asarray(scan.distances, dtype=float)[use]
        hit = np.isfinite(dist)
        res = geo.resolution
        lengths = np.where(hit, dist / res + _HIT_EPS, scan.max_range / res)
        origin = geo.to_grid(scan.origin)
        origins = np.broadcast_to(origin, dirs.shape)
        dims = np.array(geo.dims)
        clipped = clip_lengths(origins, dirs, lengths, dims)
        hit &= clipped >= lengths - 1e-9
        vox, _, _, valid = traverse(origins, dirs, clipped)
        if vox.shape[1] == 0:
            return None
        inb = valid & np.all((vox >= 0) & (vox < dims), axis=2)
        # the last valid voxel of a hit ray is the hit voxel
        last = valid.sum(axis=1) - 1
        is_hit_cell = np.zeros_like(valid)
        rows = np.nonzero(hit & (last >= 0))[0]
        is_hit_cell[rows, last[rows]] = True
        occ_idx = vox[is_hit_cell & inb]
        free_idx = vox[inb & ~is_hit_cell]
        occ_keys = np.unique(geo.keys(occ_idx)) if occ_idx.size else np.zeros(0, np.int64)
        free_keys = np.unique(geo.keys(free_idx)) if free_idx.size else np.zeros(0, np.int64)
        free_keys = np.setdiff1d(free_keys, occ_keys, assume_unique=True)
        before = self.journal_end
        self.set_states(free_keys, FREE, scan_id)
        self.set_states(occ_keys, OCCUPIED, scan_id)
        if self.journal_end == before:
            return None
        keys = self.changes_since(before)[0]
        return Aabb.from_indices(geo.indices(keys))

    # -- snapshots --------------------------------------------------------
    _MAGIC = b"VXMAP1\n"

    def save_snapshot(self, path) -> None:
        """Binary dump: magic, origin, resolution, dims, one byte per voxel."""
        header = struct.pack("<4d3q", *self.origin, self.resolution, *self.dims)
        payload = np.ascontiguousarray(self.states, dtype=np.uint8).tobytes()
        Path(path).write_bytes(self._MAGIC + header + payload)

    @classmethod
    def load_snapshot(cls, path) -> "VoxelMap":
        data = Path(path).read_bytes()
        if not data.startswith(cls._MAGIC):
            raise ValueError("not a voxel map snapshot")
        off = len(cls._MAGIC)
        fields = struct.unpack_from("<4d3q", data, off)
        off += struct.calcsize("<4d3q")
        vmap = cls(fields[:3], fields[3], fields[4:])
        payload = np.frombuffer(data, dtype=np.uint8, offset=off)
        if payload.size != vmap.geometry.size or np.any(payload > OCCUPIED):
            raise ValueError("corrupt snapshot payload")
        vmap.states[...] = payload.reshape(vmap.dims)
        return vmap
