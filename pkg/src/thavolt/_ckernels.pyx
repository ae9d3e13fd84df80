# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_pykernels``.

The per-sample loops are plain C; the mode contraction in the chain
kernels is left to one BLAS call, which is hard to beat by hand.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def kernel_matrix(const double[:, ::1] X, int d, double scale):
    cdef Py_ssize_t N = X.shape[0], q = X.shape[1]
    cdef Py_ssize_t s, t, i
    cdef double acc, p
    cdef int e
    out = np.empty((N, N), dtype=np.float64)
    cdef double[:, ::1] K = out
    for s in range(N):
        for t in range(s + 1):
            acc = 0.0
            for i in range(q):
                acc += X[s, i] * X[t, i]
            p = 1.0
            for e in range(d):
                p *= acc
            K[s, t] = scale * p
            K[t, s] = scale * p
    return out


def _mode_contract(X, core):
    # M[t] = sum_i X[t, i] core[:, i, :], one BLAS call for all samples
    r, q, s = core.shape
    M = np.asarray(X) @ np.asarray(core).transpose(1, 0, 2).reshape(q, r * s)
    return M.reshape(-1, r, s)


def chain_left(const double[:, :, ::1] L, const double[:, ::1] X,
               const double[:, :, ::1] core):
    cdef Py_ssize_t N = L.shape[0], a = L.shape[1], r = L.shape[2]
    cdef Py_ssize_t s = core.shape[2]
    cdef Py_ssize_t t, j, k, c
    cdef double lv
    cdef const double[:, :, ::1] M = _mode_contract(X, core)
    out = np.zeros((N, a, s), dtype=np.float64)
    cdef double[:, :, ::1] O = out
    with nogil:
        for t in range(N):
            for j in range(a):
                for k in range(r):
                    lv = L[t, j, k]
                    for c in range(s):
                        O[t, j, c] += lv * M[t, k, c]
    return out


def chain_right(const double[:, ::1] X, const double[:, :, ::1] core,
                const double[:, ::1] R):
    cdef Py_ssize_t N = X.shape[0]
    cdef Py_ssize_t r = core.shape[0], s = core.shape[2]
    cdef Py_ssize_t t, k, c
    cdef double acc
    cdef const double[:, :, ::1] M = _mode_contract(X, core)
    out = np.empty((N, r), dtype=np.float64)
    cdef double[:, ::1] O = out
    with nogil:
        for t in range(N):
            for k in range(r):
                acc = 0.0
                for c in range(s):
                    acc += M[t, k, c] * R[t, c]
                O[t, k] = acc
    return out


def local_design(const double[:, :, ::1] L, const double[:, ::1] Xm,
                 const double[:, ::1] R):
    cdef Py_ssize_t N = L.shape[0], n_out = L.shape[1], ra = L.shape[2]
    cdef Py_ssize_t m = Xm.shape[1], rb = R.shape[1]
    cdef Py_ssize_t t, j, a, i, b, row, col
    cdef double la, lx
    out = np.empty((N * n_out, ra * m * rb), dtype=np.float64)
    cdef double[:, ::1] A = out
    for t in range(N):
        for j in range(n_out):
            row = t * n_out + j
            col = 0
            for a in range(ra):
                la = L[t, j, a]
                for i in range(m):
                    lx = la * Xm[t, i]
                    for b in range(rb):
                        A[row, col] = lx * R[t, b]
                        col += 1
    return out


def row_kron(const double[:, ::1] X, const double[:, ::1] Z):
    cdef Py_ssize_t N = X.shape[0], q = X.shape[1], qz = Z.shape[1]
    cdef Py_ssize_t t, i, k
    cdef double x
    out = np.empty((N, q * qz), dtype=np.float64)
    cdef double[:, ::1] O = out
    for t in range(N):
        for i in range(q):
            x = X[t, i]
            for k in range(qz):
                O[t, i * qz + k] = x * Z[t, k]
    return out
