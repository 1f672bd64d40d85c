"""Binary occupancy grids: the network's raw input representation.

A grid covers the canonical cube [-0.5, 0.5]^3 with R cells per axis.
Cells flatten x-fastest: index = ix + R*iy + R^2*iz.  The on-disk SRVOX
format is a one-line ASCII header followed by the occupancy bits packed
eight per byte in flatten order (first cell = most significant bit of the
first byte), zero-padded to a byte boundary.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import Mesh

_MAGIC = "SRVOX"
_VERSION = "1"

VOXEL_EPS = 1e-9  # slack when checking a mesh sits inside the unit cube


class GridFormatError(ValueError):
    """Raised for malformed SRVOX payloads."""


@dataclass(frozen=True)
class VoxelGrid:
    """R^3 binary occupancy, axes ordered (ix, iy, iz)."""

    resolution: int
    occupancy: np.ndarray  # (R, R, R) uint8
    shape_id: str = ""

    def __post_init__(self):
        r = self.resolution
        if self.occupancy.shape != (r, r, r):
            raise ValueError(f"occupancy shape {self.occupancy.shape} does not match "
                             f"resolution {r}")

    def count(self) -> int:
        return int(self.occupancy.sum())

    def key(self) -> bytes:
        """Content identity, used to dedupe grids during training."""
        return self.occupancy.tobytes()


def voxelize(mesh: Mesh, resolution: int, fill: str = "surface") -> VoxelGrid:
    """Rasterize a normalized mesh into a binary occupancy grid.

    `surface` marks every cell whose closed box overlaps a triangle (exact
    separating-axis test).  `solid` additionally fills interior cells, i.e.
    empty cells unreachable from the grid boundary through empty
    6-connected neighbors.
    """
    if resolution < 2:
        raise ValueError(f"resolution must be >= 2, got {resolution}")
    if fill not in ("surface", "solid"):
        raise ValueError(f"fill must be 'surface' or 'solid', got {fill!r}")
    lo, hi = mesh.bounds()
    if lo.min() < -0.5 - VOXEL_EPS or hi.max() > 0.5 + VOXEL_EPS:
        raise ValueError("mesh is not normalized: bounding box exceeds the unit cube "
                         f"(bounds {lo} .. {hi})")

    occ = _kernels.voxelize_surface(
        np.ascontiguousarray(mesh.vertices, dtype=np.float64),
        np.ascontiguousarray(mesh.triangles, dtype=np.int64),
        int(resolution),
    )
    if fill == "solid":
        occ = _kernels.flood_fill_outside(occ)
    return VoxelGrid(resolution=int(resolution), occupancy=occ, shape_id=mesh.name)


def grid_to_input(grid: VoxelGrid) -> np.ndarray:
    """Flatten a grid to the network input vector (x-fastest, values 0/1)."""
    return grid.occupancy.astype(np.float64).flatten(order="F")


def _input_to_occupancy(values: np.ndarray, resolution: int) -> np.ndarray:
    return values.reshape((resolution,) * 3, order="F").astype(np.uint8)


def write_grid(grid: VoxelGrid, path: str | os.PathLike) -> None:
    if "\n" in grid.shape_id or "\r" in grid.shape_id:
        raise ValueError("shape_id may not contain newlines")
    flat = grid.occupancy.flatten(order="F").astype(np.uint8)
    payload = np.packbits(flat)  # first cell -> MSB of byte 0
    header = f"{_MAGIC} {_VERSION} {grid.resolution} {grid.shape_id}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(payload.tobytes())


def grid_to_bytes(grid: VoxelGrid) -> bytes:
    """Whole SRVOX file image as bytes (used by the collection server)."""
    flat = grid.occupancy.flatten(order="F").astype(np.uint8)
    header = f"{_MAGIC} {_VERSION} {grid.resolution} {grid.shape_id}\n"
    return header.encode("utf-8") + np.packbits(flat).tobytes()


def read_grid(path: str | os.PathLike) -> VoxelGrid:
    with open(path, "rb") as fh:
        raw = fh.read()
    return grid_from_bytes(raw, origin=os.fspath(path))


def grid_from_bytes(raw: bytes, origin: str = "<bytes>") -> VoxelGrid:
    nl = raw.find(b"\n")
    if nl < 0:
        raise GridFormatError(f"{origin}: missing header line")
    try:
        header = raw[:nl].decode("utf-8")
    except UnicodeDecodeError:
        raise GridFormatError(f"{origin}: header is not UTF-8") from None
    parts = header.split(" ", 3)
    if len(parts) < 3 or parts[0] != _MAGIC:
        raise GridFormatError(f"{origin}: bad magic {header[:16]!r}")
    if parts[1] != _VERSION:
        raise GridFormatError(f"{origin}: unsupported version {parts[1]!r}")
    try:
        resolution = int(parts[2])
    except ValueError:
        raise GridFormatError(f"{origin}: bad resolution {parts[2]!r}") from None
    if resolution < 1:
        raise GridFormatError(f"{origin}: bad resolution {resolution}")
    shape_id = parts[3] if len(parts) == 4 else ""

    n_cells = resolution ** 3
    n_bytes = math.ceil(n_cells / 8)
    payload = raw[nl + 1:]
    if len(payload) != n_bytes:
        raise GridFormatError(f"{origin}: payload is {len(payload)} bytes, "
                              f"expected {n_bytes} for resolution {resolution}")
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    if bits[n_cells:].any():
        raise GridFormatError(f"{origin}: nonzero padding bits")
    occ = _input_to_occupancy(bits[:n_cells], resolution)
    return VoxelGrid(resolution=resolution, occupancy=occ, shape_id=shape_id)
