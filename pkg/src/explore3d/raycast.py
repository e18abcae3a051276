"""Exact voxel traversal for batches of rays.

All quantities are in grid units: a voxel ``(i, j, k)`` occupies the unit
cube ``[i, i+1) x [j, j+1) x [k, k+1)``.  Traversal is computed from the
sorted set of axis-plane crossings of each segment, so every voxel that the
segment pierces with positive length is reported, in order along the ray.
"""
from __future__ import annotations

import math

import numpy as np

_MIN_INTERVAL = 1e-12


def clip_lengths(origins: np.ndarray, directions: np.ndarray, lengths: np.ndarray,
                 dims: np.ndarray) -> np.ndarray:
    """Clip ray lengths so each segment stays inside the box ``[0, dims)``."""
    lengths = np.asarray(lengths, dtype=float).copy()
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for a in range(3):
            d = directions[:, a]
            o = origins[:, a]
            t_exit = np.where(d > 0, (dims[a] - o) / d, np.where(d < 0, -o / d, np.inf))
            lengths = np.minimum(lengths, t_exit)
    return np.maximum(lengths, 0.0)


def traverse(origins: np.ndarray, directions: np.ndarray, lengths: np.ndarray):
    """Voxels pierced by each segment ``origin + t * direction``, ``0 <= t <= length``.

    Args:
        origins: (N, 3) ray origins in grid units.
        directions: (N, 3) unit directions.
        lengths: (N,) segment lengths in grid units.

    Returns:
        ``(voxels, t_enter, t_exit, valid)`` with shapes (N, M, 3), (N, M),
        (N, M) and (N, M).  Row ``n`` lists the voxels of ray ``n`` in
        traversal order; entries with ``valid == False`` are padding and
        always trail the valid ones.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    lengths = np.broadcast_to(np.asarray(lengths, dtype=float), (origins.shape[0],))
    n = origins.shape[0]
    if n == 0:
        return (np.zeros((0, 0, 3), dtype=np.int64), np.zeros((0, 0)), np.zeros((0, 0)),
                np.zeros((0, 0), dtype=bool))

    max_len = float(lengths.max()) if n else 0.0
    steps = int(math.ceil(max_len)) + 2
    ramp = np.arange(steps, dtype=float)
    columns = [np.zeros((n, 1)), lengths[:, None]]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for a in range(3):
            d = directions[:, a:a + 1]
            o = origins[:, a:a + 1]
            base = np.where(d > 0, np.floor(o) + 1.0, np.floor(o))
            planes = np.where(d > 0, base + ramp, base - ramp)
            t = (planes - o) / d
            t = np.where((d != 0) & (t > 0) & (t < lengths[:, None]), t, np.inf)
            columns.append(t)
    ts = np.sort(np.concatenate(columns, axis=1), axis=1, kind="stable")  # merges sorted runs
    ts = ts[:, :max(2, int(np.isfinite(ts).sum(axis=1).max()))]  # drop all-inf columns
    t0 = ts[:, :-1].copy()
    t1 = ts[:, 1:].copy()
    finite = np.isfinite(t1)
    t0f = np.where(finite, t0, 0.0)
    t1f = np.where(finite, t1, 0.0)
    valid = finite & (t1f - t0f > _MIN_INTERVAL)
    mid = 0.5 * (t0f + t1f)
    pts = origins[:, None, :] + directions[:, None, :] * mid[:, :, None]
    voxels = np.floor(pts).astype(np.int64)

    # compact rows so valid entries come first (only rows with interior gaps need it)
    gaps = np.any(valid[:, 1:] & ~valid[:, :-1], axis=1)
    if gaps.any():
        rows = np.nonzero(gaps)[0]
        order = np.argsort(~valid[rows], axis=1, kind="stable")
        valid[rows] = np.take_along_axis(valid[rows], order, axis=1)
        voxels[rows] = np.take_along_axis(voxels[rows], order[:, :, None], axis=1)
        t0[rows] = np.take_along_axis(t0[rows], order, axis=1)
        t1[rows] = np.take_along_axis(t1[rows], order, axis=1)
    width = int(valid.sum(axis=1).max()) if n else 0
    return voxels[:, :width], t0[:, :width], t1[:, :width], valid[:, :width]
