# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Arithmetic is written in the same order as the numpy fallback so the two
backends agree bit-for-bit on max/argmax/geometry and to rounding on logsumexp.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


def segment_max(const double[:, :] values, const long[:] offsets):
    cdef Py_ssize_t rows = values.shape[0]
    cdef Py_ssize_t n_dims = offsets.shape[0] - 1
    out_arr = np.empty((rows, n_dims))
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t b, i, j
    cdef double m
    for b in range(rows):
        for i in range(n_dims):
            m = values[b, offsets[i]]
            for j in range(offsets[i] + 1, offsets[i + 1]):
                if values[b, j] > m:
                    m = values[b, j]
            out[b, i] = m
    return out_arr


def segment_argmax(const double[:, :] values, const long[:] offsets):
    cdef Py_ssize_t rows = values.shape[0]
    cdef Py_ssize_t n_dims = offsets.shape[0] - 1
    out_arr = np.empty((rows, n_dims), dtype=np.int64)
    cdef long[:, :] out = out_arr
    cdef Py_ssize_t b, i, j, best
    cdef double m
    for b in range(rows):
        for i in range(n_dims):
            best = offsets[i]
            m = values[b, best]
            for j in range(offsets[i] + 1, offsets[i + 1]):
                if values[b, j] > m:
                    m = values[b, j]
                    best = j
            out[b, i] = best - offsets[i]
    return out_arr


def segment_logsumexp(const double[:, :] values, const long[:] offsets):
    cdef Py_ssize_t rows = values.shape[0]
    cdef Py_ssize_t n_dims = offsets.shape[0] - 1
    out_arr = np.empty((rows, n_dims))
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t b, i, j
    cdef double m, s
    for b in range(rows):
        for i in range(n_dims):
            m = values[b, offsets[i]]
            for j in range(offsets[i] + 1, offsets[i + 1]):
                if values[b, j] > m:
                    m = values[b, j]
            s = 0.0
            for j in range(offsets[i], offsets[i + 1]):
                s += exp(values[b, j] - m)
            out[b, i] = m + log(s)
    return out_arr


def masked_segment_max(const double[:, :] values, mask, const long[:] offsets):
    cdef const cnp.uint8_t[:, :] allowed = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t rows = values.shape[0]
    cdef Py_ssize_t n_dims = offsets.shape[0] - 1
    out_arr = np.empty((rows, n_dims))
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t b, i, j
    cdef double m
    for b in range(rows):
        for i in range(n_dims):
            m = -INFINITY
            for j in range(offsets[i], offsets[i + 1]):
                if allowed[b, j] and values[b, j] > m:
                    m = values[b, j]
            out[b, i] = m
    return out_arr


cdef inline double _orient(double ax, double ay, double bx, double by,
                           double cx, double cy) nogil:
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


cdef inline bint _on_segment(double ax, double ay, double bx, double by,
                             double cx, double cy) nogil:
    return (min(ax, bx) <= cx <= max(ax, bx)) and (min(ay, by) <= cy <= max(ay, by))


cdef bint _intersect(double px, double py, double qx, double qy,
                     double ax, double ay, double bx, double by) nogil:
    cdef double d1 = _orient(ax, ay, bx, by, px, py)
    cdef double d2 = _orient(ax, ay, bx, by, qx, qy)
    cdef double d3 = _orient(px, py, qx, qy, ax, ay)
    cdef double d4 = _orient(px, py, qx, qy, bx, by)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and \
            ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and _on_segment(ax, ay, bx, by, px, py):
        return True
    if d2 == 0 and _on_segment(ax, ay, bx, by, qx, qy):
        return True
    if d3 == 0 and _on_segment(px, py, qx, qy, ax, ay):
        return True
    if d4 == 0 and _on_segment(px, py, qx, qy, bx, by):
        return True
    return False


def segments_intersect(double px, double py, double qx, double qy,
                       double ax, double ay, double bx, double by):
    return bool(_intersect(px, py, qx, qy, ax, ay, bx, by))


def maze_move(double x, double y, double dx, double dy, const double[:, :] walls):
    cdef double nx = x + dx
    cdef double ny = y + dy
    cdef Py_ssize_t k
    if nx < 0.0 or nx > 1.0 or ny < 0.0 or ny > 1.0:
        return x, y, True
    for k in range(walls.shape[0]):
        if _intersect(x, y, nx, ny, walls[k, 0], walls[k, 1], walls[k, 2], walls[k, 3]):
            return x, y, True
    return nx, ny, False


def pooled_max(const double[:, :] uniforms, Py_ssize_t n_in,
               double half_width_in, double half_width_out):
    cdef Py_ssize_t rows = uniforms.shape[0]
    cdef Py_ssize_t cols = uniforms.shape[1]
    out_arr = np.empty(rows)
    cdef double[:] out = out_arr
    cdef Py_ssize_t r, j
    cdef double best, v
    with nogil:
        for r in range(rows):
            best = -INFINITY
            for j in range(cols):
                if j < n_in:
                    v = (2.0 * uniforms[r, j] - 1.0) * half_width_in
                else:
                    v = (2.0 * uniforms[r, j] - 1.0) * half_width_out
                if v > best:
                    best = v
            out[r] = best
    return out_arr
