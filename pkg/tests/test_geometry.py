import numpy as np
import pytest
from hypothesis import given, strategies as st

from shaperank.geometry import Mesh, ObjParseError, load_mesh, normalize_mesh


def test_load_cube(cube_obj):
    mesh = load_mesh(cube_obj)
    assert mesh.vertices.shape == (8, 3)
    assert mesh.triangles.shape == (12, 3)
    assert mesh.name == "cube"


def test_quad_fan_triangulation(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    mesh = load_mesh(p)
    assert mesh.triangles.shape == (2, 3)
    assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_face_index_out_of_range(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 99\n")
    with pytest.raises(ObjParseError, match="out of range"):
        load_mesh(p)


def test_negative_indices_count_from_end(tmp_path):
    p = tmp_path / "neg.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
    mesh = load_mesh(p)
    assert mesh.triangles.tolist() == [[0, 1, 2]]


def test_slash_face_tokens_and_ignored_records(tmp_path):
    p = tmp_path / "full.obj"
    p.write_text("mtllib x.mtl\nvn 0 0 1\nvt 0 0\n"
                 "v 0 0 0\nv 1 0 0\nv 0 1 0\n"
                 "usemtl m\nf 1/1/1 2//1 3/1\n")
    mesh = load_mesh(p)
    assert mesh.triangles.shape == (1, 3)


def test_zero_faces_rejected(tmp_path):
    p = tmp_path / "empty.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\n")
    with pytest.raises(ObjParseError, match="no faces"):
        load_mesh(p)


def test_malformed_vertex_reports_line(tmp_path):
    p = tmp_path / "mal.obj"
    p.write_text("v 0 0 0\nv nope 0 0\n")
    with pytest.raises(ObjParseError, match="line 2"):
        load_mesh(p)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_mesh("/nonexistent/mesh.obj")


def test_normalize_unit_cube_is_fixed_point(cube_obj):
    mesh = load_mesh(cube_obj)
    out = normalize_mesh(mesh, padding=0.0)
    np.testing.assert_allclose(out.vertices, mesh.vertices, atol=1e-15)


def test_normalize_translate_and_scale():
    verts = np.array([[10.0, 10, 10], [12, 10, 10], [12, 12, 10], [10, 10, 12]])
    mesh = Mesh(vertices=verts, triangles=np.array([[0, 1, 2], [0, 2, 3]]), name="m")
    out = normalize_mesh(mesh, padding=0.0)
    lo, hi = out.bounds()
    np.testing.assert_allclose((hi + lo) / 2, 0.0, atol=1e-15)
    assert abs((hi - lo).max() - 1.0) < 1e-12


def test_normalize_degenerate():
    mesh = Mesh(vertices=np.zeros((3, 3)), triangles=np.array([[0, 1, 2]]), name="d")
    with pytest.raises(ValueError, match="degenerate"):
        normalize_mesh(mesh)


def test_normalize_keeps_connectivity(cube_obj):
    mesh = load_mesh(cube_obj)
    out = normalize_mesh(mesh, padding=0.2)
    assert out.triangles is mesh.triangles


@given(st.floats(0.0, 0.9), st.integers(0, 2 ** 32 - 1))
def test_normalize_idempotent_and_extent(padding, seed):
    rng = np.random.default_rng(seed)
    verts = rng.uniform(-50, 50, (6, 3))
    if (verts.max(0) - verts.min(0)).max() <= 0:
        return
    mesh = Mesh(vertices=verts, triangles=np.array([[0, 1, 2], [3, 4, 5]]), name="r")
    once = normalize_mesh(mesh, padding)
    twice = normalize_mesh(once, padding)
    np.testing.assert_allclose(twice.vertices, once.vertices, atol=1e-12)
    lo, hi = once.bounds()
    assert abs((hi - lo).max() - (1.0 - padding)) < 1e-12
