# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled voxelization kernels: hot loops of the surface SAT test and the
solid flood fill.  Mirrors pure.py exactly; grids from the two backends are
bit-identical."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs

cnp.import_array()


cdef inline double dmin3(double a, double b, double c) nogil:
    cdef double m = a
    if b < m:
        m = b
    if c < m:
        m = c
    return m


cdef inline double dmax3(double a, double b, double c) nogil:
    cdef double m = a
    if b > m:
        m = b
    if c > m:
        m = c
    return m


cdef inline void cross(const double* a, const double* b, double* out) nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef bint tri_box_overlap(const double* v0, const double* v1, const double* v2,
                          double cx, double cy, double cz, double h) nogil:
    """Akenine-Moller separating-axis test; touching counts as overlap."""
    cdef double u0[3]
    cdef double u1[3]
    cdef double u2[3]
    cdef double e0[3]
    cdef double e1[3]
    cdef double e2[3]
    cdef double ax[3]
    cdef double p0, p1, p2, lo, hi, rad
    cdef int i, j

    u0[0] = v0[0] - cx; u0[1] = v0[1] - cy; u0[2] = v0[2] - cz
    u1[0] = v1[0] - cx; u1[1] = v1[1] - cy; u1[2] = v1[2] - cz
    u2[0] = v2[0] - cx; u2[1] = v2[1] - cy; u2[2] = v2[2] - cz

    # box-normal axes (AABB test)
    for i in range(3):
        lo = dmin3(u0[i], u1[i], u2[i])
        hi = dmax3(u0[i], u1[i], u2[i])
        if lo > h or hi < -h:
            return False

    for i in range(3):
        e0[i] = u1[i] - u0[i]
        e1[i] = u2[i] - u1[i]
        e2[i] = u0[i] - u2[i]

    # triangle-normal axis
    cross(e0, e1, ax)
    p0 = ax[0] * u0[0] + ax[1] * u0[1] + ax[2] * u0[2]
    rad = h * (fabs(ax[0]) + fabs(ax[1]) + fabs(ax[2]))
    if p0 > rad or p0 < -rad:
        return False

    # nine edge-cross axes
    cdef double* edges[3]
    edges[0] = e0; edges[1] = e1; edges[2] = e2
    cdef double basis[3][3]
    for i in range(3):
        for j in range(3):
            basis[i][j] = 1.0 if i == j else 0.0

    for i in range(3):
        for j in range(3):
            cross(edges[i], basis[j], ax)
            p0 = ax[0] * u0[0] + ax[1] * u0[1] + ax[2] * u0[2]
            p1 = ax[0] * u1[0] + ax[1] * u1[1] + ax[2] * u1[2]
            p2 = ax[0] * u2[0] + ax[1] * u2[1] + ax[2] * u2[2]
            lo = dmin3(p0, p1, p2)
            hi = dmax3(p0, p1, p2)
            rad = h * (fabs(ax[0]) + fabs(ax[1]) + fabs(ax[2]))
            if lo > rad or hi < -rad:
                return False

    return True


def voxelize_surface(cnp.ndarray[cnp.float64_t, ndim=2] vertices,
                     cnp.ndarray[cnp.int64_t, ndim=2] triangles,
                     int resolution):
    """Mark every cell whose closed box overlaps any triangle."""
    cdef int r = resolution
    cdef cnp.ndarray[cnp.uint8_t, ndim=3] occ = np.zeros((r, r, r), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] occ_v = occ
    cdef const double[:, ::1] verts = np.ascontiguousarray(vertices)
    cdef const cnp.int64_t[:, ::1] tris = np.ascontiguousarray(triangles)

    cdef double h = 0.5 / r
    cdef double cell = 1.0 / r
    cdef Py_ssize_t t, n_tris = tris.shape[0]
    cdef double v0[3]
    cdef double v1[3]
    cdef double v2[3]
    cdef double bmin, bmax, cx, cy, cz
    cdef long lo[3]
    cdef long hi[3]
    cdef long ix, iy, iz, k
    cdef cnp.int64_t a, b, c

    with nogil:
        for t in range(n_tris):
            a = tris[t, 0]; b = tris[t, 1]; c = tris[t, 2]
            for k in range(3):
                v0[k] = verts[a, k]
                v1[k] = verts[b, k]
                v2[k] = verts[c, k]
                bmin = dmin3(v0[k], v1[k], v2[k])
                bmax = dmax3(v0[k], v1[k], v2[k])
                lo[k] = <long>floor((bmin + 0.5) * r) - 1
                hi[k] = <long>floor((bmax + 0.5) * r) + 1
                if lo[k] < 0:
                    lo[k] = 0
                if hi[k] > r - 1:
                    hi[k] = r - 1
            for ix in range(lo[0], hi[0] + 1):
                cx = -0.5 + (ix + 0.5) * cell
                for iy in range(lo[1], hi[1] + 1):
                    cy = -0.5 + (iy + 0.5) * cell
                    for iz in range(lo[2], hi[2] + 1):
                        if occ_v[ix, iy, iz]:
                            continue
                        cz = -0.5 + (iz + 0.5) * cell
                        if tri_box_overlap(v0, v1, v2, cx, cy, cz, h):
                            occ_v[ix, iy, iz] = 1

    return occ


def flood_fill_outside(cnp.ndarray[cnp.uint8_t, ndim=3] occ):
    """Solid occupancy: fill empty cells unreachable from the grid boundary."""
    cdef int r = occ.shape[0]
    cdef cnp.ndarray[cnp.uint8_t, ndim=3] solid = np.ones((r, r, r), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] solid_v = solid
    cdef const cnp.uint8_t[:, :, ::1] occ_v = np.ascontiguousarray(occ)

    # BFS over empty cells, seeded from the boundary faces; solid==0 marks
    # "reachable empty" while the fill runs, and the final array is ~outside.
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stack = np.empty(r * r * r, dtype=np.int64)
    cdef cnp.int64_t[::1] stk = stack
    cdef Py_ssize_t top = 0
    cdef long ix, iy, iz, code

    with nogil:
        for ix in range(r):
            for iy in range(r):
                for iz in range(r):
                    if ix == 0 or iy == 0 or iz == 0 or ix == r - 1 or iy == r - 1 or iz == r - 1:
                        if occ_v[ix, iy, iz] == 0 and solid_v[ix, iy, iz] == 1:
                            solid_v[ix, iy, iz] = 0
                            stk[top] = (<cnp.int64_t>ix * r + iy) * r + iz
                            top += 1
        while top > 0:
            top -= 1
            code = <long>(stk[top])
            iz = code % r
            iy = (code // r) % r
            ix = code // (r * r)
            if ix > 0 and occ_v[ix - 1, iy, iz] == 0 and solid_v[ix - 1, iy, iz] == 1:
                solid_v[ix - 1, iy, iz] = 0
                stk[top] = (<cnp.int64_t>(ix - 1) * r + iy) * r + iz
                top += 1
            if ix < r - 1 and occ_v[ix + 1, iy, iz] == 0 and solid_v[ix + 1, iy, iz] == 1:
                solid_v[ix + 1, iy, iz] = 0
                stk[top] = (<cnp.int64_t>(ix + 1) * r + iy) * r + iz
                top += 1
            if iy > 0 and occ_v[ix, iy - 1, iz] == 0 and solid_v[ix, iy - 1, iz] == 1:
                solid_v[ix, iy - 1, iz] = 0
                stk[top] = (<cnp.int64_t>ix * r + (iy - 1)) * r + iz
                top += 1
            if iy < r - 1 and occ_v[ix, iy + 1, iz] == 0 and solid_v[ix, iy + 1, iz] == 1:
                solid_v[ix, iy + 1, iz] = 0
                stk[top] = (<cnp.int64_t>ix * r + (iy + 1)) * r + iz
                top += 1
            if iz > 0 and occ_v[ix, iy, iz - 1] == 0 and solid_v[ix, iy, iz - 1] == 1:
                solid_v[ix, iy, iz - 1] = 0
                stk[top] = (<cnp.int64_t>ix * r + iy) * r + (iz - 1)
                top += 1
            if iz < r - 1 and occ_v[ix, iy, iz + 1] == 0 and solid_v[ix, iy, iz + 1] == 1:
                solid_v[ix, iy, iz + 1] = 0
                stk[top] = (<cnp.int64_t>ix * r + iy) * r + (iz + 1)
                top += 1

    return solid
