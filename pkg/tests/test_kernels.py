import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omnigraph.core import kernels

IMPLS = kernels.implementations()


def test_fallback_always_available():
    assert "python" in IMPLS
    assert kernels.BACKEND in IMPLS


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31))
def test_backends_agree(n_rows, n_cols, n_seg, seed):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n_seg, size=n_rows)
    vals = rng.normal(size=(n_rows, n_cols))
    ref_sum = kernels.scatter_add(idx, vals, n_seg, impl="python")
    ref_max = kernels.segment_max(idx, vals, n_seg, impl="python")
    for impl in IMPLS:
        np.testing.assert_array_equal(kernels.scatter_add(idx, vals, n_seg, impl=impl), ref_sum)
        np.testing.assert_array_equal(kernels.segment_max(idx, vals, n_seg, impl=impl), ref_max)


def test_scatter_add_direct():
    out = kernels.scatter_add(np.array([1, 0, 1]), np.array([[1.0], [2.0], [3.0]]), 3)
    np.testing.assert_array_equal(out, [[2.0], [4.0], [0.0]])


def test_segment_max_empty_segment_is_neg_inf():
    out = kernels.segment_max(np.array([0, 0]), np.array([[1.0], [5.0]]), 2)
    assert out[0, 0] == 5.0 and out[1, 0] == -np.inf


def test_higher_rank_values():
    vals = np.arange(24, dtype=np.float64).reshape(4, 3, 2)
    out = kernels.scatter_add(np.array([0, 1, 0, 1]), vals, 2)
    assert out.shape == (2, 3, 2)
    np.testing.assert_array_equal(out[0], vals[0] + vals[2])
    np.testing.assert_array_equal(out[1], vals[1] + vals[3])


@pytest.mark.parametrize("impl", IMPLS)
def test_index_out_of_range(impl):
    with pytest.raises(IndexError):
        kernels.scatter_add(np.array([0, 3]), np.ones((2, 1)), 3, impl=impl)


def test_env_forces_fallback():
    code = "from omnigraph.core import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, OMNIGRAPH_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
