"""Ground-truth worlds: box scenes, procedural generators, and the scene file format.

Scene file format (``.scene``)::

    # explore3d-scene v1
    size = 20 20 3          # extent in meters, world spans [0, size)
    resolution = 0.2        # optional, rasterization resolution hint
    box = x0 y0 z0 x1 y1 z1 # any number of axis-aligned boxes (meters)
    generator = maze        # optional provenance: maze | building | pillars
    seed = 7
    cell_size = 2.0
    wall_height = 3.0

Blank lines and ``#`` comments are ignored.  The first non-blank line must
be the versioned header.  The outermost voxel layer is always occupied, so
every world is sealed.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from .voxel_map import GridGeometry

SCENE_HEADER = "# explore3d-scene v1"


@dataclass
class GroundTruthWorld:
    size: tuple[float, float, float]
    resolution: float
    boxes: list[tuple[float, float, float, float, float, float]] = field(default_factory=list)
    meta: dict[str, str] = field(default_factory=dict)

    @cached_property
    def geometry(self) -> GridGeometry:
        dims = tuple(max(3, int(round(s / self.resolution))) for s in self.size)
        return GridGeometry((0.0, 0.0, 0.0), self.resolution, dims)

    @cached_property
    def occupancy(self) -> np.ndarray:
        """Boolean (nx, ny, nz) grid: a voxel is occupied when its center lies in a box."""
        geo = self.geometry
        occ = np.zeros(geo.dims, dtype=bool)
        axes = [geo.origin[a] + (np.arange(geo.dims[a]) + 0.5) * geo.resolution for a in range(3)]
        for x0, y0, z0, x1, y1, z1 in self.boxes:
            sx = (axes[0] > x0) & (axes[0] < x1)
            sy = (axes[1] > y0) & (axes[1] < y1)
            sz = (axes[2] > z0) & (axes[2] < z1)
            occ |= sx[:, None, None] & sy[None, :, None] & sz[None, None, :]
        occ[0, :, :] = occ[-1, :, :] = True
        occ[:, 0, :] = occ[:, -1, :] = True
        occ[:, :, 0] = occ[:, :, -1] = True
        return occ

    def is_free(self, point) -> bool:
        idx = self.geometry.world_to_index(point)
        return self.geometry.in_bounds(idx) and not self.occupancy[idx]

    def reachable(self, start) -> np.ndarray:
        """Ground-truth free voxels 6-connected to ``start`` (boolean grid)."""
        from scipy import ndimage

        idx = self.geometry.world_to_index(start)
        labels, _ = ndimage.label(~self.occupancy)
        lab = labels[idx]
        if lab == 0:
            return np.zeros(self.geometry.dims, dtype=bool)
        return labels == lab

    def coverage_target(self, start) -> np.ndarray:
        """Reachable free voxels plus the occupied voxels bounding them."""
        from scipy import ndimage

        free = self.reachable(start)
        shell = ndimage.binary_dilation(free, structure=ndimage.generate_binary_structure(3, 1))
        return free | (shell & self.occupancy)

    # -- file format ------------------------------------------------------
    def to_text(self) -> str:
        lines = [SCENE_HEADER, f"size = {_fmt(self.size)}", f"resolution = {self.resolution:g}"]
        for key in sorted(self.meta):
            lines.append(f"{key} = {self.meta[key]}")
        for b in self.boxes:
            lines.append(f"box = {_fmt(b)}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str, resolution: Optional[float] = None) -> "GroundTruthWorld":
        size = None
        res = None
        boxes = []
        meta = {}
        for key, value in parse_key_values(text, SCENE_HEADER):
            if key == "size":
                size = _floats(value, 3, key)
            elif key == "resolution":
                res = float(value)
            elif key == "box":
                b = _floats(value, 6, key)
                if any(b[a] >= b[a + 3] for a in range(3)):
                    raise ValueError(f"box min must be below max: {value}")
                boxes.append(b)
            else:
                meta[key] = value
        if size is None:
            raise ValueError("scene is missing 'size'")
        res = resolution or res or 0.2
        return cls(size=size, resolution=res, boxes=boxes, meta=meta)

    @classmethod
    def load(cls, path, resolution: Optional[float] = None) -> "GroundTruthWorld":
        return cls.from_text(Path(path).read_text(), resolution)


def parse_key_values(text: str, header: str) -> list[tuple[str, str]]:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0] != header:
        raise ValueError(f"expected header line {header!r}")
    out = []
    for n, line in enumerate(lines[1:], start=2):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out.append((key, value))
    return out


def _floats(value: str, n: int, key: str) -> tuple[float, ...]:
    parts = value.split()
    if len(parts) != n:
        raise ValueError(f"{key}: expected {n} numbers, got {value!r}")
    return tuple(float(p) for p in parts)


def _fmt(values) -> str:
    return " ".join(f"{v:g}" for v in values)


# -- procedural generators ---------------------------------------------------

def maze_world(seed: int, size=(20.0, 20.0, 3.0), cell_size: float = 2.0,
               wall_height: Optional[float] = None, resolution: float = 0.2,
               thickness: float = 0.4, loops: float = 0.1) -> GroundTruthWorld:
    """Perfect maze by randomized depth-first search, with a few extra openings."""
    rng = random.Random(seed)
    wall_height = size[2] if wall_height is None else wall_height
    nx = max(1, int(round(size[0] / cell_size)))
    ny = max(1, int(round(size[1] / cell_size)))
    cx = size[0] / nx
    cy = size[1] / ny
    # walls[(i, j, 'e')] separates cell (i, j) from (i+1, j); 'n' from (i, j+1)
    walls = {(i, j, d) for i in range(nx) for j in range(ny) for d in "en"
             if (d == "e" and i + 1 < nx) or (d == "n" and j + 1 < ny)}
    seen = {(0, 0)}
    stack = [(0, 0)]
    while stack:
        i, j = stack[-1]
        nbrs = [(i + di, j + dj) for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
                if 0 <= i + di < nx and 0 <= j + dj < ny and (i + di, j + dj) not in seen]
        if not nbrs:
            stack.pop()
            continue
        ni, nj = rng.choice(nbrs)
        if ni != i:
            walls.discard((min(i, ni), j, "e"))
        else:
            walls.discard((i, min(j, nj), "n"))
        seen.add((ni, nj))
        stack.append((ni, nj))
    for w in sorted(walls):
        if rng.random() < loops:
            walls.discard(w)
    h = thickness / 2.0
    boxes = []
    for i, j, d in sorted(walls):
        if d == "e":
            x = (i + 1) * cx
            boxes.append((x - h, j * cy - h, 0.0, x + h, (j + 1) * cy + h, wall_height))
        else:
            y = (j + 1) * cy
            boxes.append((i * cx - h, y - h, 0.0, (i + 1) * cx + h, y + h, wall_height))
    meta = {"generator": "maze", "seed": str(seed), "cell_size": f"{cell_size:g}",
            "wall_height": f"{wall_height:g}"}
    return GroundTruthWorld(size=tuple(size), resolution=resolution, boxes=boxes, meta=meta)


def building_world(seed: int, size=(20.0, 20.0, 3.0), cell_size: float = 4.0,
                   wall_height: Optional[float] = None, resolution: float = 0.2,
                   thickness: float = 0.4, door: float = 1.2) -> GroundTruthWorld:
    """Rooms on a grid joined by doorways, with furniture blocks of varied height."""
    rng = random.Random(seed)
    wall_height = size[2] if wall_height is None else wall_height
    nx = max(1, int(round(size[0] / cell_size)))
    ny = max(1, int(round(size[1] / cell_size)))
    cx = size[0] / nx
    cy = size[1] / ny
    h = thickness / 2.0
    boxes = []
    for i in range(1, nx):
        x = i * cx
        for j in range(ny):
            lo, hi = j * cy, (j + 1) * cy
            d0 = rng.uniform(lo + 0.5, hi - 0.5 - door)
            boxes.append((x - h, lo - h, 0.0, x + h, d0, wall_height))
            boxes.append((x - h, d0 + door, 0.0, x + h, hi + h, wall_height))
    for j in range(1, ny):
        y = j * cy
        for i in range(nx):
            lo, hi = i * cx, (i + 1) * cx
            d0 = rng.uniform(lo + 0.5, hi - 0.5 - door)
            boxes.append((lo - h, y - h, 0.0, d0, y + h, wall_height))
            boxes.append((d0 + door, y - h, 0.0, hi + h, y + h, wall_height))
    for i in range(nx):
        for j in range(ny):
            if rng.random() < 0.6:
                w, d = rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0)
                x0 = rng.uniform(i * cx + 0.6, (i + 1) * cx - 0.6 - w)
                y0 = rng.uniform(j * cy + 0.6, (j + 1) * cy - 0.6 - d)
                top = rng.choice([0.8, 1.2, wall_height])
                boxes.append((x0, y0, 0.0, x0 + w, y0 + d, top))
    meta = {"generator": "building", "seed": str(seed), "cell_size": f"{cell_size:g}",
            "wall_height": f"{wall_height:g}"}
    return GroundTruthWorld(size=tuple(size), resolution=resolution, boxes=boxes, meta=meta)


def pillars_world(seed: int, size=(20.0, 20.0, 3.0), count: int = 25,
                  resolution: float = 0.2, keep_clear=(1.0, 1.0)) -> GroundTruthWorld:
    """Open hall with randomly placed columns and low blocks."""
    rng = random.Random(seed)
    boxes = []
    for _ in range(count):
        w = rng.uniform(0.4, 1.2)
        x0 = rng.uniform(0.5, size[0] - 0.5 - w)
        y0 = rng.uniform(0.5, size[1] - 0.5 - w)
        if x0 < keep_clear[0] + 1.0 and y0 < keep_clear[1] + 1.0:
            continue
        top = size[2] if rng.random() < 0.7 else rng.uniform(0.6, 1.5)
        boxes.append((x0, y0, 0.0, x0 + w, y0 + w, top))
    meta = {"generator": "pillars", "seed": str(seed)}
    return GroundTruthWorld(size=tuple(size), resolution=resolution, boxes=boxes, meta=meta)


GENERATORS = {"maze": maze_world, "building": building_world, "pillars": pillars_world}
