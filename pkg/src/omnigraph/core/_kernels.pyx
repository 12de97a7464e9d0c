# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled segment reductions used by gather/scatter message passing."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def scatter_add_rows(const cnp.int64_t[::1] index, const double[:, ::1] values, Py_ssize_t n):
    cdef Py_ssize_t e, k, row
    cdef Py_ssize_t n_items = values.shape[0]
    cdef Py_ssize_t width = values.shape[1]
    out = np.zeros((n, width), dtype=np.float64)
    cdef double[:, ::1] o = out
    for e in range(n_items):
        row = index[e]
        if row < 0 or row >= n:
            raise IndexError("segment index out of range")
        for k in range(width):
            o[row, k] += values[e, k]
    return out


def segment_max_rows(const cnp.int64_t[::1] index, const double[:, ::1] values, Py_ssize_t n):
    cdef Py_ssize_t e, k, row
    cdef Py_ssize_t n_items = values.shape[0]
    cdef Py_ssize_t width = values.shape[1]
    out = np.full((n, width), -np.inf, dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double v
    for e in range(n_items):
        row = index[e]
        if row < 0 or row >= n:
            raise IndexError("segment index out of range")
        for k in range(width):
            v = values[e, k]
            if v > o[row, k]:
                o[row, k] = v
    return out
