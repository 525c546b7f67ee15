# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scan for the subsequence nearest-neighbor score.

The per-step cost of the detector is dominated by this scan: the Euclidean
distance between the live window and every history subsequence. The loop
early-abandons a candidate as soon as its partial sum exceeds the best
distance so far, which prunes most candidates on quiet streams.
"""

from libc.math cimport sqrt, INFINITY


def subseq_min_dist(const double[:, ::1] subs, const double[::1] window):
    """Minimum Euclidean distance from `window` to any row of `subs`."""
    cdef Py_ssize_t n = subs.shape[0]
    cdef Py_ssize_t w = subs.shape[1]
    if window.shape[0] != w:
        raise ValueError("window length does not match subsequence width")
    if n == 0:
        raise ValueError("empty subsequence set")

    cdef double best = INFINITY
    cdef double acc, d
    cdef Py_ssize_t i, k
    cdef bint pruned
    for i in range(n):
        acc = 0.0
        pruned = False
        for k in range(w):
            d = subs[i, k] - window[k]
            acc += d * d
            if acc >= best:
                pruned = True
                break
        if not pruned and acc < best:
            best = acc
    return sqrt(best)


def subseq_min_dists(const double[:, ::1] subs, const double[:, ::1] windows):
    """subseq_min_dist applied to each row of `windows` (same arithmetic)."""
    import numpy as np

    cdef Py_ssize_t m = windows.shape[0]
    out = np.empty(m, dtype=np.float64)
    cdef double[::1] out_view = out
    cdef Py_ssize_t j
    for j in range(m):
        out_view[j] = subseq_min_dist(subs, windows[j])
    return out
