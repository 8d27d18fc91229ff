"""Numeric kernels with a numba fast path and a pure-numpy fallback.

Set ``COMPOUND_SCHED_NO_JIT=1`` to force the numpy path (also used
automatically when numba cannot be imported). Both paths are always importable
as ``*_jit`` / ``*_numpy`` so tests and the benchmark can compare them.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_JIT = HAS_NUMBA and os.environ.get("COMPOUND_SCHED_NO_JIT", "") not in ("1", "true", "yes")


# ---------------------------------------------------------------------------
# Pareto dominance
# ---------------------------------------------------------------------------


def dominated_mask_numpy(points: np.ndarray) -> np.ndarray:
    """``mask[i]`` is True when some other row weakly beats row i everywhere
    and strictly somewhere (all columns minimized)."""
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] == 0:
        return np.zeros(0, dtype=np.bool_)
    le = (points[:, None, :] <= points[None, :, :]).all(axis=2)
    lt = (points[:, None, :] < points[None, :, :]).any(axis=2)
    # dom[j, i]: row j dominates row i
    dom = le & lt
    return dom.any(axis=0)


def _dominated_mask_loop(points):
    n = points.shape[0]
    m = points.shape[1]
    out = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            weak = True
            strict = False
            for k in range(m):
                a = points[j, k]
                b = points[i, k]
                if a > b:
                    weak = False
                    break
                if a < b:
                    strict = True
            if weak and strict:
                out[i] = True
                break
    return out


# ---------------------------------------------------------------------------
# Peak concurrent usage of a set of [start, end) intervals
# ---------------------------------------------------------------------------


def peak_usage_numpy(starts: np.ndarray, ends: np.ndarray, units: np.ndarray) -> int:
    """Maximum of the summed ``units`` over time; an interval ending at t frees
    its units before one starting at t claims them."""
    starts = np.asarray(starts, dtype=np.int64)
    if starts.size == 0:
        return 0
    ends = np.asarray(ends, dtype=np.int64)
    units = np.asarray(units, dtype=np.int64)
    times = np.concatenate([ends, starts])
    # releases (kind 0) sort before claims (kind 1) at equal times
    kinds = np.concatenate([np.zeros(ends.size, np.int64), np.ones(starts.size, np.int64)])
    deltas = np.concatenate([-units, units])
    order = np.lexsort((kinds, times))
    return int(max(0, np.cumsum(deltas[order]).max()))


def _peak_usage_loop(starts, ends, units):
    n = starts.shape[0]
    if n == 0:
        return 0
    times = np.empty(2 * n, dtype=np.int64)
    keys = np.empty(2 * n, dtype=np.int64)
    deltas = np.empty(2 * n, dtype=np.int64)
    for i in range(n):
        times[i] = ends[i]
        keys[i] = 0
        deltas[i] = -units[i]
        times[n + i] = starts[i]
        keys[n + i] = 1
        deltas[n + i] = units[i]
    # ties within one key are all claims or all releases, so sort stability
    # cannot change the peak
    order = np.argsort(times * 2 + keys)
    level = 0
    best = 0
    for idx in order:
        level += deltas[idx]
        if level > best:
            best = level
    return best


if HAS_NUMBA:
    dominated_mask_jit = njit(cache=True)(_dominated_mask_loop)
    _peak_usage_jit = njit(cache=True)(_peak_usage_loop)

    def peak_usage_jit(starts, ends, units) -> int:
        return int(
            _peak_usage_jit(
                np.asarray(starts, dtype=np.int64),
                np.asarray(ends, dtype=np.int64),
                np.asarray(units, dtype=np.int64),
            )
        )

else:  # pragma: no cover
    dominated_mask_jit = dominated_mask_numpy
    peak_usage_jit = peak_usage_numpy


def dominated_mask(points) -> np.ndarray:
    points = np.ascontiguousarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be 2-D")
    if USE_JIT:
        return dominated_mask_jit(points)
    return dominated_mask_numpy(points)


def peak_usage(starts, ends, units) -> int:
    if USE_JIT:
        return peak_usage_jit(starts, ends, units)
    return peak_usage_numpy(starts, ends, units)
