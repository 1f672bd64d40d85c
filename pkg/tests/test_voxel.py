import numpy as np
import pytest

from shaperank import _kernels
from shaperank._kernels import pure
from shaperank.geometry import Mesh
from shaperank.voxel import (GridFormatError, VoxelGrid, grid_from_bytes,
                             grid_to_bytes, grid_to_input, read_grid, voxelize,
                             write_grid)

from conftest import axis_cube_mesh, grid_from_cells


def expected_cube_shell(half: float, r: int) -> np.ndarray:
    """Cells whose closed box meets the boundary of [-half, half]^3."""
    edges = np.linspace(-0.5, 0.5, r + 1)
    lo, hi = edges[:-1], edges[1:]
    covers = (lo <= half) & (hi >= -half)          # cell range meets [-h, h]
    crosses = ((lo <= -half) & (hi >= -half)) | ((lo <= half) & (hi >= half))
    occ = np.zeros((r, r, r), dtype=np.uint8)
    for i in range(r):
        for j in range(r):
            for k in range(r):
                c = covers[i] and covers[j] and covers[k]
                on_face = crosses[i] or crosses[j] or crosses[k]
                occ[i, j, k] = 1 if (c and on_face) else 0
    return occ


def test_cube_surface_shell_r15():
    grid = voxelize(axis_cube_mesh(0.45), 15, "surface")
    np.testing.assert_array_equal(grid.occupancy, expected_cube_shell(0.45, 15))
    # strict interior empty
    assert grid.occupancy[7, 7, 7] == 0


def test_cube_solid_fills_interior():
    surface = voxelize(axis_cube_mesh(0.45), 15, "surface")
    solid = voxelize(axis_cube_mesh(0.45), 15, "solid")
    edges = np.linspace(-0.5, 0.5, 16)
    covers = (edges[:-1] <= 0.45) & (edges[1:] >= -0.45)
    expected = np.zeros((15, 15, 15), dtype=np.uint8)
    expected[np.ix_(covers, covers, covers)] = 1
    np.testing.assert_array_equal(solid.occupancy, expected)
    assert set(map(tuple, np.argwhere(surface.occupancy))) <= \
        set(map(tuple, np.argwhere(solid.occupancy)))


def test_voxelize_preconditions():
    with pytest.raises(ValueError, match="resolution"):
        voxelize(axis_cube_mesh(), 1)
    with pytest.raises(ValueError, match="fill"):
        voxelize(axis_cube_mesh(), 8, "both")
    big = Mesh(vertices=np.array([[0.0, 0, 0], [2, 0, 0], [0, 2, 0]]),
               triangles=np.array([[0, 1, 2]]), name="big")
    with pytest.raises(ValueError, match="not normalized"):
        voxelize(big, 8)


def test_triangle_order_invariance():
    mesh = axis_cube_mesh(0.4)
    grid = voxelize(mesh, 11)
    perm = Mesh(vertices=mesh.vertices, triangles=mesh.triangles[::-1].copy(),
                name="perm")
    np.testing.assert_array_equal(voxelize(perm, 11).occupancy, grid.occupancy)


def test_rotation_symmetry_of_symmetric_mesh():
    grid = voxelize(axis_cube_mesh(0.37), 12)
    # 90-degree rotation about z maps the occupied set onto itself
    rotated = np.rot90(grid.occupancy, k=1, axes=(0, 1))
    np.testing.assert_array_equal(rotated, grid.occupancy)


def test_surface_subset_of_solid_random():
    rng = np.random.default_rng(3)
    verts = rng.uniform(-0.45, 0.45, (12, 3))
    tris = rng.integers(0, 12, (8, 3)).astype(np.int64)
    mesh = Mesh(vertices=verts, triangles=tris, name="soup")
    surf = voxelize(mesh, 10, "surface").occupancy
    solid = voxelize(mesh, 10, "solid").occupancy
    assert np.all(surf <= solid)


@pytest.mark.skipif(_kernels.BACKEND != "compiled",
                    reason="compiled kernel not built")
def test_backends_bit_identical():
    rng = np.random.default_rng(11)
    verts = rng.uniform(-0.48, 0.48, (40, 3))
    tris = rng.integers(0, 40, (60, 3)).astype(np.int64)
    for r in (5, 16, 23):
        a = _kernels.voxelize_surface(verts, tris, r)
        b = pure.voxelize_surface(verts, tris, r)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(_kernels.flood_fill_outside(a),
                                      pure.flood_fill_outside(b))


def test_flood_fill_matches_scipy():
    import scipy.ndimage as ndi
    rng = np.random.default_rng(5)
    occ = (rng.random((12, 12, 12)) < 0.25).astype(np.uint8)
    got = pure.flood_fill_outside(occ)
    ref = ndi.binary_fill_holes(occ.astype(bool)).astype(np.uint8)
    np.testing.assert_array_equal(got, ref)


def test_grid_to_input_flatten_order():
    g = grid_from_cells(2, [(1, 0, 0)])
    np.testing.assert_array_equal(grid_to_input(g),
                                  [0, 1, 0, 0, 0, 0, 0, 0])
    g2 = grid_from_cells(2, [(0, 1, 0)])
    assert grid_to_input(g2)[2] == 1
    g3 = grid_from_cells(2, [(0, 0, 1)])
    assert grid_to_input(g3)[4] == 1


def test_grid_to_input_empty_and_full():
    assert grid_to_input(grid_from_cells(2, [])).tolist() == [0.0] * 8
    full = VoxelGrid(2, np.ones((2, 2, 2), dtype=np.uint8), "f")
    assert grid_to_input(full).tolist() == [1.0] * 8


def test_grid_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    occ = (rng.random((9, 9, 9)) < 0.4).astype(np.uint8)
    g = VoxelGrid(9, occ, "round trip id")
    path = tmp_path / "g.srvox"
    write_grid(g, path)
    back = read_grid(path)
    assert back.resolution == 9
    assert back.shape_id == "round trip id"
    np.testing.assert_array_equal(back.occupancy, occ)


def test_grid_payload_size_r15(tmp_path):
    g = VoxelGrid(15, np.zeros((15, 15, 15), dtype=np.uint8), "x")
    path = tmp_path / "g.srvox"
    write_grid(g, path)
    raw = path.read_bytes()
    header, payload = raw.split(b"\n", 1)
    assert header == b"SRVOX 1 15 x"
    assert len(payload) == 422  # ceil(3375 / 8)


def test_grid_bad_magic():
    with pytest.raises(GridFormatError, match="magic"):
        grid_from_bytes(b"XXXX 1 4 a\n" + bytes(8))


def test_grid_payload_length_mismatch():
    g = grid_from_cells(4, [(0, 0, 0)])
    raw = grid_to_bytes(g)
    with pytest.raises(GridFormatError, match="payload"):
        grid_from_bytes(raw[:-1])
    with pytest.raises(GridFormatError, match="payload"):
        grid_from_bytes(raw + b"\x00")


def test_grid_nonzero_padding_rejected():
    g = grid_from_cells(3, [(2, 2, 2)])
    raw = bytearray(grid_to_bytes(g))
    raw[-1] |= 0x01  # 27 cells -> 5 padding bits in the last byte
    with pytest.raises(GridFormatError, match="padding"):
        grid_from_bytes(bytes(raw))
