"""Rotation matrices and trilinear resampling of voxel grids.

Voxel ``i`` along an axis has its center at coordinate ``i``; a grid of
size ``n`` is centered at ``(n - 1) / 2``.
"""
from __future__ import annotations

import numpy as np


def euler_matrix(phi: float, theta: float, psi: float) -> np.ndarray:
    """Rotation ``Rz(psi) @ Ry(theta) @ Rx(phi)``.

    ``psi`` is the in-plane angle (about the beam axis z); ``phi`` and
    ``theta`` tilt the object out of the detector plane.
    """
    cx, sx = np.cos(phi), np.sin(phi)
    cy, sy = np.cos(theta), np.sin(theta)
    cz, sz = np.cos(psi), np.sin(psi)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def rotated_extent(shape, rotation: np.ndarray) -> tuple[int, int, int]:
    """Smallest grid shape holding ``shape`` after rotation about its center."""
    half = (np.asarray(shape, dtype=float)) / 2.0
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * half
    span = np.abs(corners @ rotation.T).max(axis=0) * 2.0
    return tuple(int(v) for v in np.ceil(span - 1e-9) + 2)


def resample(arrays, rotation: np.ndarray, out_shape=None) -> list[np.ndarray]:
    """Rotate each 3-D array of ``arrays`` about its center.

    Output voxel ``o`` reads the input at ``R.T @ (o - c_out) + c_in`` with
    trilinear interpolation; samples outside the input read as zero. All
    arrays must share one shape; the interpolation weights are computed once.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    in_shape = arrays[0].shape
    if out_shape is None:
        out_shape = in_shape
    c_in = (np.asarray(in_shape, dtype=float) - 1.0) / 2.0
    c_out = (np.asarray(out_shape, dtype=float) - 1.0) / 2.0

    grids = np.indices(out_shape, dtype=np.float64).reshape(3, -1)
    grids -= c_out[:, None]
    src = rotation.T @ grids + c_in[:, None]

    base = np.floor(src)
    frac = src - base
    base = base.astype(np.int64)
    n_out = grids.shape[1]
    outs = [np.zeros(n_out) for _ in arrays]
    dims = np.asarray(in_shape)[:, None]

    for dx in (0, 1):
        wx = frac[0] if dx else 1.0 - frac[0]
        for dy in (0, 1):
            wy = frac[1] if dy else 1.0 - frac[1]
            for dz in (0, 1):
                wz = frac[2] if dz else 1.0 - frac[2]
                idx = base + np.array([[dx], [dy], [dz]])
                ok = np.all((idx >= 0) & (idx < dims), axis=0)
                if not ok.any():
                    continue
                w = (wx * wy * wz)[ok]
                i, j, k = idx[:, ok]
                for out, arr in zip(outs, arrays):
                    out[ok] += w * arr[i, j, k]
    return [o.reshape(out_shape) for o in outs]
