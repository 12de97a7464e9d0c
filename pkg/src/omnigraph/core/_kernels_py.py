"""Pure numpy reference for the compiled segment kernels."""

import numpy as np


def _check(index, n):
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError("segment index out of range")


def scatter_add_rows(index, values, n):
    _check(index, n)
    out = np.zeros((n, values.shape[1]), dtype=np.float64)
    np.add.at(out, index, values)
    return out


def segment_max_rows(index, values, n):
    _check(index, n)
    out = np.full((n, values.shape[1]), -np.inf, dtype=np.float64)
    np.maximum.at(out, index, values)
    return out
