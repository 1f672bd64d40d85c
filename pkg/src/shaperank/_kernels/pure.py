"""Pure numpy voxelization kernels (fallback for the compiled extension).

Both backends implement the same contract and produce bit-identical grids:
separating-axis triangle/box overlap for the surface pass, and a
6-connected flood fill from the grid boundary for the solid pass.
"""
from __future__ import annotations

import numpy as np

# Axis-aligned unit basis, used to build the 9 edge-cross separating axes.
_BASIS = np.eye(3)


def _triangle_axes(v: np.ndarray) -> np.ndarray:
    """The 13 candidate separating axes for one triangle (13, 3)."""
    e = np.array([v[1] - v[0], v[2] - v[1], v[0] - v[2]])
    axes = [_BASIS[0], _BASIS[1], _BASIS[2], np.cross(e[0], e[1])]
    for i in range(3):
        for j in range(3):
            axes.append(np.cross(e[i], _BASIS[j]))
    return np.asarray(axes)


def voxelize_surface(vertices: np.ndarray, triangles: np.ndarray,
                     resolution: int) -> np.ndarray:
    """Mark every cell whose closed box overlaps any triangle.

    The grid covers [-0.5, 0.5]^3 with `resolution` cells per axis; the
    returned array is uint8 with axes (ix, iy, iz).
    """
    r = int(resolution)
    occ = np.zeros((r, r, r), dtype=np.uint8)
    h = 0.5 / r  # cell half-size
    cell = 1.0 / r

    for tri in triangles:
        v = vertices[tri]  # (3, 3)
        bmin = v.min(axis=0)
        bmax = v.max(axis=0)
        # candidate index range, one cell of slack so touching cells are kept
        lo = np.clip(np.floor((bmin + 0.5) * r).astype(np.int64) - 1, 0, r - 1)
        hi = np.clip(np.floor((bmax + 0.5) * r).astype(np.int64) + 1, 0, r - 1)

        ix, iy, iz = np.meshgrid(
            np.arange(lo[0], hi[0] + 1),
            np.arange(lo[1], hi[1] + 1),
            np.arange(lo[2], hi[2] + 1),
            indexing="ij",
        )
        idx = np.stack([ix.ravel(), iy.ravel(), iz.ravel()], axis=1)  # (k, 3)
        centers = -0.5 + (idx + 0.5) * cell

        axes = _triangle_axes(v)  # (13, 3)
        q = v @ axes.T  # (3, 13) triangle projections
        qmin = q.min(axis=0)
        qmax = q.max(axis=0)
        radius = h * np.abs(axes).sum(axis=1)  # (13,)

        s = centers @ axes.T  # (k, 13) box-center projections
        separated = ((qmin - s > radius) | (qmax - s < -radius)).any(axis=1)
        keep = idx[~separated]
        occ[keep[:, 0], keep[:, 1], keep[:, 2]] = 1

    return occ


def flood_fill_outside(occ: np.ndarray) -> np.ndarray:
    """Solid occupancy: fill empty cells unreachable from the grid boundary.

    Reachability is through empty cells only, 6-connected.  Returns a new
    uint8 grid; the input is not modified.
    """
    empty = occ == 0
    outside = np.zeros_like(empty)
    # seed: empty cells on the six boundary faces
    for axis in range(3):
        sl = [slice(None)] * 3
        for face in (0, -1):
            sl[axis] = face
            outside[tuple(sl)] = empty[tuple(sl)]

    while True:
        grown = outside.copy()
        grown[1:, :, :] |= outside[:-1, :, :]
        grown[:-1, :, :] |= outside[1:, :, :]
        grown[:, 1:, :] |= outside[:, :-1, :]
        grown[:, :-1, :] |= outside[:, 1:, :]
        grown[:, :, 1:] |= outside[:, :, :-1]
        grown[:, :, :-1] |= outside[:, :, 1:]
        grown &= empty
        if np.array_equal(grown, outside):
            break
        outside = grown

    return (~outside).astype(np.uint8)
