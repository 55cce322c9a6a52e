# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: matmul, one-sided Jacobi sweeps, blockwise codebook lookup.

Every function here has a pure-Python twin in ``_pycore`` with the same
signature. Inputs are validated by the callers in ``linalg``/``quant``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

BACKEND = "cython"


def matmul(a_in, b_in):
    """C = A @ B; each c[i, j] accumulates k = 0..p-1 in order."""
    cdef const double[:, ::1] a = np.ascontiguousarray(a_in, dtype=np.float64)
    cdef const double[:, ::1] b = np.ascontiguousarray(b_in, dtype=np.float64)
    cdef Py_ssize_t m = a.shape[0], p = a.shape[1], n = b.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double aik
    cdef double* crow
    cdef const double* brow
    out = np.zeros((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    if m == 0 or n == 0 or p == 0:
        return out
    with nogil:
        for i in range(m):
            crow = &c[i, 0]
            for k in range(p):
                aik = a[i, k]
                brow = &b[k, 0]
                for j in range(n):
                    crow[j] += aik * brow[j]
    return out


def jacobi_sweeps(double[::1, :] w, double[::1, :] v, double tol, int max_sweeps):
    """One-sided Jacobi on the columns of ``w`` (m x n, m >= n), accumulating into ``v``.

    Both arrays are Fortran-ordered and updated in place. Returns the number of
    sweeps used, or -1 if ``max_sweeps`` was exhausted.
    """
    cdef Py_ssize_t m = w.shape[0], n = w.shape[1]
    cdef Py_ssize_t p, q, i
    cdef int sweep
    cdef bint rotated
    cdef int used = -1
    cdef double alpha, beta, gamma, zeta, t, c, s, wp, wq
    with nogil:
        for sweep in range(max_sweeps):
            rotated = False
            for p in range(n - 1):
                for q in range(p + 1, n):
                    alpha = 0.0
                    beta = 0.0
                    gamma = 0.0
                    for i in range(m):
                        wp = w[i, p]
                        wq = w[i, q]
                        alpha += wp * wp
                        beta += wq * wq
                        gamma += wp * wq
                    if alpha == 0.0 or beta == 0.0:
                        continue
                    if fabs(gamma) <= tol * sqrt(alpha) * sqrt(beta):
                        continue
                    rotated = True
                    zeta = (beta - alpha) / (2.0 * gamma)
                    if zeta >= 0.0:
                        t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                    else:
                        t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                    c = 1.0 / sqrt(1.0 + t * t)
                    s = c * t
                    for i in range(m):
                        wp = w[i, p]
                        wq = w[i, q]
                        w[i, p] = c * wp - s * wq
                        w[i, q] = s * wp + c * wq
                    for i in range(n):
                        wp = v[i, p]
                        wq = v[i, q]
                        v[i, p] = c * wp - s * wq
                        v[i, q] = s * wp + c * wq
            if not rotated:
                used = sweep + 1
                break
    return used


cdef inline int _nearest(double y, const double[::1] values, const cnp.intp_t[::1] canon) noexcept nogil:
    # first index with values[j] >= y
    cdef Py_ssize_t lo = 0, hi = values.shape[0], mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if values[mid] < y:
            lo = mid + 1
        else:
            hi = mid
    if lo == 0:
        return 0
    if lo == values.shape[0]:
        return <int>canon[lo - 1]
    if y - values[lo - 1] <= values[lo] - y:
        return <int>canon[lo - 1]
    return <int>canon[lo]


def quantize_blocks(const double[::1] x, Py_ssize_t block_size, const double[::1] values,
                    const cnp.intp_t[::1] canon, int zero_index):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t nblocks = (n + block_size - 1) // block_size
    codes_arr = np.empty(n, dtype=np.uint8)
    scales_arr = np.empty(nblocks, dtype=np.float64)
    cdef cnp.uint8_t[::1] codes = codes_arr
    cdef double[::1] scales = scales_arr
    cdef Py_ssize_t b, i, start, stop
    cdef double amax, a
    with nogil:
        for b in range(nblocks):
            start = b * block_size
            stop = start + block_size
            if stop > n:
                stop = n
            amax = 0.0
            for i in range(start, stop):
                a = fabs(x[i])
                if a > amax:
                    amax = a
            scales[b] = amax
            if amax == 0.0:
                for i in range(start, stop):
                    codes[i] = <cnp.uint8_t>zero_index
            else:
                for i in range(start, stop):
                    codes[i] = <cnp.uint8_t>_nearest(x[i] / amax, values, canon)
    return codes_arr, scales_arr


def dequantize_blocks(const cnp.uint8_t[::1] codes, const double[::1] scales,
                      Py_ssize_t block_size, const double[::1] values):
    cdef Py_ssize_t n = codes.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = scales[i // block_size] * values[codes[i]]
    return out_arr
