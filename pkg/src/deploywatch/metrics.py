"""Binary detection metrics and best-F1 threshold selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if (p + r) else 0.0

    @property
    def fpr(self) -> float:
        d = self.fp + self.tn
        return self.fp / d if d else 0.0


def confusion(y_true: np.ndarray, y_pred: np.ndarray) -> Confusion:
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    return Confusion(
        tp=int(np.sum(y_pred & y_true)),
        fp=int(np.sum(y_pred & ~y_true)),
        tn=int(np.sum(~y_pred & ~y_true)),
        fn=int(np.sum(~y_pred & y_true)),
    )


def sweep_candidates(scores: np.ndarray, *, include_unit_interval: bool = True) -> np.ndarray:
    """Midpoints of sorted unique scores, optionally with the {0, 1} extremes."""
    uniq = np.unique(np.asarray(scores, dtype=np.float64))
    mids = (uniq[:-1] + uniq[1:]) / 2.0 if uniq.size > 1 else np.empty(0)
    extras = np.array([0.0, 1.0]) if include_unit_interval else np.empty(0)
    return np.unique(np.concatenate([mids, extras]))


def select_threshold(scores: np.ndarray, labels: np.ndarray) -> tuple[float, Confusion]:
    """Threshold maximizing F1 of `score >= theta`.

    Candidates are midpoints of sorted unique scores plus {0, 1}. Ties break
    toward lower FPR, then lower theta.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.min() == labels.max():
        raise ValueError("threshold selection needs both classes in the labels")
    best: tuple[float, float, float] | None = None  # (-f1, fpr, theta)
    best_conf: Confusion | None = None
    for theta in sweep_candidates(scores):
        conf = confusion(labels, scores >= theta)
        key = (-conf.f1, conf.fpr, theta)
        if best is None or key < best:
            best = key
            best_conf = conf
    assert best is not None and best_conf is not None
    return best[2], best_conf


def best_f1(scores: np.ndarray, labels: np.ndarray) -> float:
    """Best achievable F1 over all cut points of unbounded scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = np.unique(scores)
    mids = (uniq[:-1] + uniq[1:]) / 2.0 if uniq.size > 1 else np.empty(0)
    cands = np.concatenate([[uniq[0] - 1.0], mids])  # include the all-positive cut
    out = 0.0
    for theta in cands:
        f1 = confusion(labels, scores >= theta).f1
        if f1 > out:
            out = f1
    return out
