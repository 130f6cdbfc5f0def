# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Every kernel processes rows independently and accumulates in a fixed
ascending order, so a row computed inside a block is bit-identical to the
same row computed alone. Build without ``-ffast-math``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline void _row_matvec(const double* x, const double* w, double* out,
                             Py_ssize_t n_in, Py_ssize_t n_out) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef double xi
    cdef const double* wi
    for j in range(n_out):
        out[j] = 0.0
    for i in range(n_in):
        xi = x[i]
        wi = w + i * n_out
        for j in range(n_out):
            out[j] += xi * wi[j]


cdef inline void _rows4_matvec(const double* x, const double* w, double* out,
                               Py_ssize_t n_in, Py_ssize_t n_out) noexcept nogil:
    # four rows share each pass over w; per-row accumulation order is unchanged
    cdef Py_ssize_t i, j
    cdef double x0, x1, x2, x3
    cdef const double* wi
    cdef double* o0 = out
    cdef double* o1 = out + n_out
    cdef double* o2 = out + 2 * n_out
    cdef double* o3 = out + 3 * n_out
    for j in range(4 * n_out):
        out[j] = 0.0
    for i in range(n_in):
        x0 = x[i]
        x1 = x[n_in + i]
        x2 = x[2 * n_in + i]
        x3 = x[3 * n_in + i]
        wi = w + i * n_out
        for j in range(n_out):
            o0[j] += x0 * wi[j]
            o1[j] += x1 * wi[j]
            o2[j] += x2 * wi[j]
            o3[j] += x3 * wi[j]


def linear(const double[:, ::1] x, const double[:, ::1] w):
    cdef Py_ssize_t rows = x.shape[0], n_in = x.shape[1], n_out = w.shape[1]
    cdef Py_ssize_t r = 0
    out_arr = np.empty((rows, n_out), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    if rows == 0:
        return out_arr
    with nogil:
        while r + 4 <= rows:
            _rows4_matvec(&x[r, 0], &w[0, 0], &out[r, 0], n_in, n_out)
            r += 4
        while r < rows:
            _row_matvec(&x[r, 0], &w[0, 0], &out[r, 0], n_in, n_out)
            r += 1
    return out_arr


def rmsnorm(const double[:, ::1] x, const double[::1] weight, double eps):
    cdef Py_ssize_t rows = x.shape[0], dim = x.shape[1]
    cdef Py_ssize_t r, j
    cdef double acc, inv
    out_arr = np.empty((rows, dim), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for r in range(rows):
            acc = 0.0
            for j in range(dim):
                acc += x[r, j] * x[r, j]
            inv = 1.0 / sqrt(acc / dim + eps)
            for j in range(dim):
                out[r, j] = x[r, j] * inv * weight[j]
    return out_arr


def attend(
    const double[:, :, ::1] q,
    const double[:, :, ::1] k,
    const double[:, :, ::1] v,
    const cnp.int64_t[:, ::1] index,
    const cnp.int64_t[:, ::1] counts,
    double scale,
    Py_ssize_t probs_from=-1,
):
    """Softmax attention of each query row over a gathered subset of cached rows.

    ``q`` is (rows, q_heads, d), ``k``/``v`` are (kv_heads, capacity, d),
    ``index`` is (kv_heads, n) ascending positions and ``counts[h, r]`` is
    how many leading entries of ``index[h]`` row ``r`` may read. When
    ``probs_from >= 0`` the post-softmax weights of rows ``>= probs_from``
    are returned as (rows - probs_from, q_heads, n).
    """
    cdef Py_ssize_t rows = q.shape[0], q_heads = q.shape[1], d = q.shape[2]
    cdef Py_ssize_t kv_heads = k.shape[0], cap = k.shape[1], n = index.shape[1]
    cdef Py_ssize_t group = q_heads // kv_heads
    cdef Py_ssize_t r, h, g, i, j, c, hq
    cdef double s, e
    cdef const double* kp
    cdef const double* vp
    cdef const double* qp
    cdef double* op
    out_arr = np.zeros((rows, q_heads, d), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef double[:, :, ::1] probs
    cdef bint keep = probs_from >= 0
    if keep:
        probs_arr = np.zeros((max(rows - probs_from, 0), q_heads, n), dtype=np.float64)
        probs = probs_arr
    else:
        probs_arr = None
    if rows == 0 or n == 0:
        return out_arr, probs_arr
    # scores[g * n + i], per-head running max and sum
    cdef double* scores = <double*> malloc(group * n * sizeof(double))
    cdef double* smax = <double*> malloc(group * sizeof(double))
    cdef double* total = <double*> malloc(group * sizeof(double))
    cdef const double* kbase = &k[0, 0, 0]
    cdef const double* vbase = &v[0, 0, 0]
    if scores == NULL or smax == NULL or total == NULL:
        free(scores); free(smax); free(total)
        raise MemoryError()
    with nogil:
        for r in range(rows):
            for h in range(kv_heads):
                c = counts[h, r]
                if c == 0:
                    continue
                for g in range(group):
                    smax[g] = -1.0e308
                    total[g] = 0.0
                for i in range(c):
                    kp = kbase + (h * cap + index[h, i]) * d
                    for g in range(group):
                        qp = &q[r, h * group + g, 0]
                        s = 0.0
                        for j in range(d):
                            s += qp[j] * kp[j]
                        s = s * scale
                        scores[g * n + i] = s
                        if s > smax[g]:
                            smax[g] = s
                for g in range(group):
                    for i in range(c):
                        e = exp(scores[g * n + i] - smax[g])
                        scores[g * n + i] = e
                        total[g] += e
                for i in range(c):
                    vp = vbase + (h * cap + index[h, i]) * d
                    for g in range(group):
                        op = &out[r, h * group + g, 0]
                        e = scores[g * n + i]
                        for j in range(d):
                            op[j] += e * vp[j]
                for g in range(group):
                    hq = h * group + g
                    for j in range(d):
                        out[r, hq, j] = out[r, hq, j] / total[g]
                    if keep and r >= probs_from:
                        for i in range(c):
                            probs[r - probs_from, hq, i] = scores[g * n + i] / total[g]
    free(scores)
    free(smax)
    free(total)
    return out_arr, probs_arr
