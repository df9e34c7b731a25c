# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled inner loops: CSR-times-dense products and row-wise scatter adds.

Both kernels accumulate into ``out`` so callers control allocation. Index
arrays are int32, values float64, all C-contiguous.
"""


def csr_matmul(const int[::1] indptr, const int[::1] indices,
               const double[::1] data, const double[:, ::1] x,
               double[:, ::1] out):
    """out += A @ x for A in CSR form with shape (len(indptr)-1, x.shape[0])."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = x.shape[1]
    cdef Py_ssize_t i, p, c, j
    cdef double v
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            v = data[p]
            for c in range(d):
                out[i, c] += v * x[j, c]


def scatter_add_rows(const double[:, ::1] src, const int[::1] idx,
                     double[:, ::1] out):
    """out[idx[e], :] += src[e, :] for every row e of src."""
    cdef Py_ssize_t m = src.shape[0]
    cdef Py_ssize_t d = src.shape[1]
    cdef Py_ssize_t e, c
    cdef Py_ssize_t r
    for e in range(m):
        r = idx[e]
        for c in range(d):
            out[r, c] += src[e, c]
