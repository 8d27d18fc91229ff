import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from compound_sched import kernels


def _brute_peak(starts, ends, units):
    best = 0
    for t in set(starts) | set(ends):
        best = max(best, sum(u for s, e, u in zip(starts, ends, units) if s <= t < e))
    return best


points = hnp.arrays(
    np.float64,
    st.tuples(st.integers(0, 25), st.integers(1, 4)),
    elements=st.integers(0, 4).map(float),
)


@settings(max_examples=150, deadline=None)
@given(points)
def test_dominance_jit_equals_numpy(pts):
    assert np.array_equal(kernels.dominated_mask_jit(pts), kernels.dominated_mask_numpy(pts))


intervals = st.lists(
    st.tuples(st.integers(0, 50), st.integers(1, 20), st.integers(1, 8)), max_size=30
).map(lambda xs: ([s for s, _, _ in xs], [s + d for s, d, _ in xs], [u for _, _, u in xs]))


@settings(max_examples=150, deadline=None)
@given(intervals)
def test_peak_usage_paths_agree_with_brute_force(iv):
    s, e, u = iv
    want = _brute_peak(s, e, u)
    assert kernels.peak_usage_numpy(s, e, u) == want
    assert kernels.peak_usage_jit(s, e, u) == want


def test_back_to_back_intervals_do_not_overlap():
    assert kernels.peak_usage([0, 10], [10, 20], [4, 4]) == 4
    assert kernels.peak_usage([], [], []) == 0


def test_dispatch_rejects_bad_shape():
    with pytest.raises(ValueError):
        kernels.dominated_mask(np.zeros(3))


def test_env_flag_forces_numpy():
    code = "from compound_sched import kernels; print(kernels.USE_JIT)"
    env = dict(os.environ, COMPOUND_SCHED_NO_JIT="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
