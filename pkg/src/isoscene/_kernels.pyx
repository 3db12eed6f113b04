# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics must match ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil, fmin, fmax

cnp.import_array()


def rasterize_triangles(double[:, :, ::1] verts, double[:, ::1] depths, int[::1] prim_ids,
                        double[:, ::1] depth_buf, int[:, ::1] id_buf):
    """Z-buffer fill of triangles given in pixel coordinates; samples pixel centers."""
    cdef Py_ssize_t n = verts.shape[0]
    cdef Py_ssize_t H = depth_buf.shape[0]
    cdef Py_ssize_t W = depth_buf.shape[1]
    cdef Py_ssize_t k, r, c, r0, r1, c0, c1
    cdef double x0, y0, x1, y1, x2, y2, d0, d1, d2, area, inv, px, py, w0, w1, w2, z
    cdef double eps = -1e-9
    for k in range(n):
        x0 = verts[k, 0, 0]; y0 = verts[k, 0, 1]
        x1 = verts[k, 1, 0]; y1 = verts[k, 1, 1]
        x2 = verts[k, 2, 0]; y2 = verts[k, 2, 1]
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if area == 0.0:
            continue
        inv = 1.0 / area
        d0 = depths[k, 0]; d1 = depths[k, 1]; d2 = depths[k, 2]
        c0 = <Py_ssize_t>fmax(ceil(fmin(fmin(x0, x1), x2) - 0.5), 0)
        c1 = <Py_ssize_t>fmin(floor(fmax(fmax(x0, x1), x2) - 0.5), W - 1)
        r0 = <Py_ssize_t>fmax(ceil(fmin(fmin(y0, y1), y2) - 0.5), 0)
        r1 = <Py_ssize_t>fmin(floor(fmax(fmax(y0, y1), y2) - 0.5), H - 1)
        for r in range(r0, r1 + 1):
            py = r + 0.5
            for c in range(c0, c1 + 1):
                px = c + 0.5
                w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) * inv
                w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) * inv
                w2 = 1.0 - w0 - w1
                if w0 < eps or w1 < eps or w2 < eps:
                    continue
                z = w0 * d0 + w1 * d1 + w2 * d2
                if z < depth_buf[r, c]:
                    depth_buf[r, c] = z
                    id_buf[r, c] = prim_ids[k]


def splat_max(long[::1] cell, double[::1] z, long[::1] labels, double[::1] out_z, long[::1] out_label):
    """Per-cell maximum of ``z`` with the label of the winning sample (first wins ties)."""
    cdef Py_ssize_t n = cell.shape[0]
    cdef Py_ssize_t i, j
    for i in range(n):
        j = cell[i]
        if z[i] > out_z[j]:
            out_z[j] = z[i]
            out_label[j] = labels[i]
