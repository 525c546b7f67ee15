"""Pure-numpy fallback for the subsequence nearest-neighbor scan.

Row-wise squared differences keep the exact-zero property for an identical
window (every term is 0.0), unlike the gemv norm trick, at the cost of
materializing the difference matrix.
"""

from __future__ import annotations

import math

import numpy as np


def subseq_min_dist(subs: np.ndarray, window: np.ndarray) -> float:
    if window.shape[0] != subs.shape[1]:
        raise ValueError("window length does not match subsequence width")
    if subs.shape[0] == 0:
        raise ValueError("empty subsequence set")
    diff = subs - window
    sq = np.einsum("ij,ij->i", diff, diff)
    return math.sqrt(float(sq.min()))


def subseq_min_dists(subs: np.ndarray, windows: np.ndarray) -> np.ndarray:
    out = np.empty(windows.shape[0], dtype=np.float64)
    for j in range(windows.shape[0]):
        out[j] = subseq_min_dist(subs, windows[j])
    return out
