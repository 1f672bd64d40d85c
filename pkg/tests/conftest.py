import numpy as np
import pytest

from shaperank.geometry import Mesh
from shaperank.voxel import VoxelGrid


CUBE_OBJ = """\
# unit cube centered at origin
v -0.5 -0.5 -0.5
v  0.5 -0.5 -0.5
v  0.5  0.5 -0.5
v -0.5  0.5 -0.5
v -0.5 -0.5  0.5
v  0.5 -0.5  0.5
v  0.5  0.5  0.5
v -0.5  0.5  0.5
f 1 2 3
f 1 3 4
f 5 7 6
f 5 8 7
f 1 5 6
f 1 6 2
f 2 6 7
f 2 7 3
f 3 7 8
f 3 8 4
f 4 8 5
f 4 5 1
"""


def axis_cube_mesh(half: float = 0.45) -> Mesh:
    """Axis-aligned cube spanning [-half, half]^3, 12 triangles."""
    s = half
    verts = np.array([
        [-s, -s, -s], [s, -s, -s], [s, s, -s], [-s, s, -s],
        [-s, -s, s], [s, -s, s], [s, s, s], [-s, s, s],
    ])
    tris = np.array([
        [0, 1, 2], [0, 2, 3], [4, 6, 5], [4, 7, 6],
        [0, 4, 5], [0, 5, 1], [1, 5, 6], [1, 6, 2],
        [2, 6, 7], [2, 7, 3], [3, 7, 4], [3, 4, 0],
    ], dtype=np.int64)
    return Mesh(vertices=verts, triangles=tris, name="cube")


@pytest.fixture
def cube_obj(tmp_path):
    path = tmp_path / "cube.obj"
    path.write_text(CUBE_OBJ)
    return path


def grid_from_cells(resolution: int, cells, shape_id: str = "g") -> VoxelGrid:
    occ = np.zeros((resolution,) * 3, dtype=np.uint8)
    for c in cells:
        occ[c] = 1
    return VoxelGrid(resolution=resolution, occupancy=occ, shape_id=shape_id)
