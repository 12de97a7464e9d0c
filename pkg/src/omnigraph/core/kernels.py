"""Segment reductions over rows, backed by a compiled extension when available.

Set ``OMNIGRAPH_PURE_PYTHON=1`` before import to force the numpy fallback.
Both backends accumulate in input order, so results are bit-identical.
"""

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("OMNIGRAPH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def _resolve(impl):
    if impl is None:
        return _impl
    if isinstance(impl, str):
        return implementations()[impl]
    return impl


def _as_2d(values):
    values = np.ascontiguousarray(values, dtype=np.float64)
    return values.reshape(values.shape[0], -1), values.shape[1:]


def scatter_add(index, values, n, impl=None):
    """Sum rows of ``values`` into ``n`` buckets given by ``index``."""
    impl = _resolve(impl)
    index = np.ascontiguousarray(index, dtype=np.int64)
    flat, tail = _as_2d(values)
    if flat.shape[0] != index.shape[0]:
        raise ValueError("index and values disagree on row count")
    return impl.scatter_add_rows(index, flat, int(n)).reshape((int(n),) + tail)


def segment_max(index, values, n, impl=None):
    """Row-wise max per bucket; empty buckets hold ``-inf``."""
    impl = _resolve(impl)
    index = np.ascontiguousarray(index, dtype=np.int64)
    flat, tail = _as_2d(values)
    if flat.shape[0] != index.shape[0]:
        raise ValueError("index and values disagree on row count")
    return impl.segment_max_rows(index, flat, int(n)).reshape((int(n),) + tail)


def implementations():
    """Available backends by name, for benchmarks and cross-checks."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        out["cython"] = _compiled
    return out
