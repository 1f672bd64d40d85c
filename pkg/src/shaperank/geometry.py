"""Triangle meshes: Wavefront OBJ loading and canonical-cube normalization.

Every shape entering the pipeline is normalized so that its bounding box is
centered at the origin and its longest axis spans (1 - padding) of the unit
cube [-0.5, 0.5]^3.  Voxelization assumes this framing.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

DEFAULT_PADDING = 0.05


class ObjParseError(ValueError):
    """Raised for malformed or unusable OBJ content (carries a line number)."""


@dataclass(frozen=True)
class Mesh:
    """An indexed triangle mesh in arbitrary model units."""

    vertices: np.ndarray  # (n, 3) float64
    triangles: np.ndarray  # (m, 3) int64, zero-based
    name: str = ""

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def _parse_face_token(token: str, line_no: int) -> int:
    # "3", "3/1", "3//2", "3/1/2" -- only the vertex index matters here
    head = token.split("/", 1)[0]
    try:
        idx = int(head)
    except ValueError:
        raise ObjParseError(f"line {line_no}: bad face index {token!r}") from None
    if idx == 0:
        raise ObjParseError(f"line {line_no}: face index 0 is invalid (OBJ is 1-based)")
    return idx


def load_mesh(path: str | os.PathLike) -> Mesh:
    """Parse a Wavefront OBJ file into a Mesh.

    Only ``v`` and ``f`` records are read; polygons are fan-triangulated.
    Negative face indices count back from the vertices defined so far, as in
    the OBJ spec.  Normals, texture coordinates and materials are ignored.
    """
    vertices: list[tuple[float, float, float]] = []
    # (resolved-or-raw index, vertex count at face time, line number) per corner
    raw_faces: list[tuple[list[int], int, int]] = []

    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            key = parts[0]
            if key == "v":
                if len(parts) < 4:
                    raise ObjParseError(f"line {line_no}: vertex needs 3 coordinates")
                try:
                    xyz = (float(parts[1]), float(parts[2]), float(parts[3]))
                except ValueError:
                    raise ObjParseError(f"line {line_no}: bad vertex coordinate") from None
                vertices.append(xyz)
            elif key == "f":
                if len(parts) < 4:
                    raise ObjParseError(f"line {line_no}: face needs at least 3 vertices")
                corners = [_parse_face_token(t, line_no) for t in parts[1:]]
                raw_faces.append((corners, len(vertices), line_no))
            # vn/vt/usemtl/mtllib/o/g/s/l and anything else: ignored

    n_verts = len(vertices)
    triangles: list[tuple[int, int, int]] = []
    for corners, count_at_face, line_no in raw_faces:
        resolved = []
        for idx in corners:
            if idx < 0:
                r = count_at_face + idx  # counted from the end, at face time
            else:
                r = idx - 1
            if r < 0 or r >= n_verts:
                raise ObjParseError(f"line {line_no}: face index {idx} out of range "
                                    f"(file has {n_verts} vertices)")
            resolved.append(r)
        for i in range(1, len(resolved) - 1):  # fan triangulation
            triangles.append((resolved[0], resolved[i], resolved[i + 1]))

    if not triangles:
        raise ObjParseError(f"{path}: no faces found")
    name = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return Mesh(
        vertices=np.asarray(vertices, dtype=np.float64),
        triangles=np.asarray(triangles, dtype=np.int64),
        name=name,
    )


def normalize_mesh(mesh: Mesh, padding: float = DEFAULT_PADDING) -> Mesh:
    """Uniformly scale and translate a mesh into the canonical cube.

    The bounding box ends up centered at the origin with its longest axis
    spanning (1 - padding); aspect ratio and orientation are untouched.
    Idempotent up to floating-point roundoff.
    """
    if not 0.0 <= padding < 1.0:
        raise ValueError(f"padding must be in [0, 1), got {padding}")
    lo, hi = mesh.bounds()
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise ValueError("degenerate mesh: zero extent on all axes")
    center = (hi + lo) / 2.0
    scale = (1.0 - padding) / extent
    verts = (mesh.vertices - center) * scale
    return Mesh(vertices=verts, triangles=mesh.triangles, name=mesh.name)
