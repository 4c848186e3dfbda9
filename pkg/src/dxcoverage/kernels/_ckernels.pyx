# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Sparse binary-row kernels used by the training loop."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef cnp.int64_t idx_t


def spmm(const idx_t[::1] indptr, const idx_t[::1] indices, row_scale,
         const double[:, ::1] dense):
    """(n_rows, cols) = X @ dense for binary CSR X with per-row scale."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t cols = dense.shape[1]
    cdef Py_ssize_t r, p, c
    cdef idx_t j
    cdef double s
    cdef const double[::1] scale
    cdef bint scaled = row_scale is not None
    if scaled:
        scale = row_scale
    out_arr = np.zeros((n, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for r in range(n):
            for p in range(indptr[r], indptr[r + 1]):
                j = indices[p]
                for c in range(cols):
                    out[r, c] += dense[j, c]
            if scaled:
                s = scale[r]
                for c in range(cols):
                    out[r, c] *= s
    return out_arr


def spmm_t(const idx_t[::1] indptr, const idx_t[::1] indices, row_scale,
           const double[:, ::1] rows, Py_ssize_t n_features):
    """(n_features, cols) = X.T @ rows for binary CSR X with per-row scale."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t cols = rows.shape[1]
    cdef Py_ssize_t r, p, c
    cdef idx_t j
    cdef double s = 1.0
    cdef const double[::1] scale
    cdef bint scaled = row_scale is not None
    if scaled:
        scale = row_scale
    out_arr = np.zeros((n_features, cols), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for r in range(n):
            if scaled:
                s = scale[r]
            for p in range(indptr[r], indptr[r + 1]):
                j = indices[p]
                for c in range(cols):
                    out[j, c] += s * rows[r, c]
    return out_arr


def gold_ranks(const double[:, ::1] probs, const idx_t[::1] gold):
    """1-based rank of each gold label; ties go to the lower label index."""
    cdef Py_ssize_t n = probs.shape[0]
    cdef Py_ssize_t L = probs.shape[1]
    cdef Py_ssize_t r, c
    cdef idx_t g, rank
    cdef double pg
    out_arr = np.empty(n, dtype=np.int64)
    cdef idx_t[::1] out = out_arr
    with nogil:
        for r in range(n):
            g = gold[r]
            pg = probs[r, g]
            rank = 1
            for c in range(L):
                if probs[r, c] > pg or (probs[r, c] == pg and c < g):
                    rank += 1
            out[r] = rank
    return out_arr
