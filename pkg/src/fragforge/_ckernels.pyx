# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled numeric kernels; mirrors ``fragforge._pykernels`` one-to-one."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def pairwise_distances(pos):
    cdef const double[:, ::1] p = np.ascontiguousarray(pos, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], i, j
    out_arr = np.zeros((n, n))
    cdef double[:, ::1] out = out_arr
    cdef double dx, dy, dz, d
    for i in range(n):
        for j in range(i + 1, n):
            dx = p[i, 0] - p[j, 0]
            dy = p[i, 1] - p[j, 1]
            dz = p[i, 2] - p[j, 2]
            d = sqrt(dx * dx + dy * dy + dz * dz)
            out[i, j] = d
            out[j, i] = d
    return out_arr


def radius_pairs(pos, double cutoff):
    cdef double[:, ::1] d = pairwise_distances(pos)
    cdef Py_ssize_t n = d.shape[0], i, j, k = 0
    for i in range(n):
        for j in range(n):
            if i != j and d[i, j] < cutoff:
                k += 1
    src_arr = np.empty(k, dtype=np.int64)
    dst_arr = np.empty(k, dtype=np.int64)
    dist_arr = np.empty(k)
    cdef cnp.int64_t[::1] src = src_arr
    cdef cnp.int64_t[::1] dst = dst_arr
    cdef double[::1] dist = dist_arr
    k = 0
    for i in range(n):
        for j in range(n):
            if i != j and d[i, j] < cutoff:
                src[k] = i
                dst[k] = j
                dist[k] = d[i, j]
                k += 1
    return src_arr, dst_arr, dist_arr


def _segment_sum_2d(const double[:, ::1] v, const cnp.int64_t[::1] idx, Py_ssize_t n):
    cdef Py_ssize_t p = v.shape[0], f = v.shape[1], r, c, t
    out_arr = np.zeros((n, f))
    cdef double[:, ::1] out = out_arr
    for r in range(p):
        t = idx[r]
        if t < 0 or t >= n:
            raise IndexError("segment index out of range")
        for c in range(f):
            out[t, c] += v[r, c]
    return out_arr


def segment_sum(values, index, n):
    values = np.asarray(values, dtype=np.float64)
    idx = np.ascontiguousarray(index, dtype=np.int64)
    shape = values.shape
    width = int(np.prod(shape[1:], dtype=np.int64))
    flat = np.ascontiguousarray(values.reshape(shape[0], width))
    out = _segment_sum_2d(flat, idx, n)
    return out.reshape((n,) + shape[1:])


def surrogate_terms(pos, radii, double tolerance, double k_bond, double lj_epsilon,
                    double sigma_scale, double sigma_offset):
    cdef const double[:, ::1] p = np.ascontiguousarray(pos, dtype=np.float64)
    cdef const double[::1] rad = np.ascontiguousarray(radii, dtype=np.float64)
    cdef Py_ssize_t n = p.shape[0], i, j, k = 0
    out_arr = np.empty(n * (n - 1) // 2 if n > 1 else 0)
    cdef double[::1] out = out_arr
    cdef double dx, dy, dz, r, r0, s, sr6
    for i in range(n):
        for j in range(i + 1, n):
            dx = p[i, 0] - p[j, 0]
            dy = p[i, 1] - p[j, 1]
            dz = p[i, 2] - p[j, 2]
            r = sqrt(dx * dx + dy * dy + dz * dz)
            r0 = rad[i] + rad[j]
            if r <= tolerance * r0:
                out[k] = k_bond * (r - r0) * (r - r0)
            else:
                s = sigma_scale * (r0 + sigma_offset) / r
                sr6 = s * s * s * s * s * s
                out[k] = 4.0 * lj_epsilon * (sr6 * sr6 - sr6)
            k += 1
    return out_arr


def min_cross_distance(a, b):
    cdef const double[:, ::1] pa = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] pb = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double best = -1.0, dx, dy, dz, d2
    for i in range(pa.shape[0]):
        for j in range(pb.shape[0]):
            dx = pa[i, 0] - pb[j, 0]
            dy = pa[i, 1] - pb[j, 1]
            dz = pa[i, 2] - pb[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if best < 0 or d2 < best:
                best = d2
    if best < 0:
        raise ValueError("min_cross_distance of an empty cloud")
    return sqrt(best)
