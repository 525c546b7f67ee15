"""Gradient-boosted regression trees for binary anomaly classification.

Stagewise logistic-loss boosting: each tree fits the negative gradient
(label minus probability) with exact greedy splits chosen by weighted
variance reduction over sorted unique feature values; leaf values are
Newton steps (sum of residuals over sum of hessians, ridged). Probabilities
come from sigmoid(base + shrinkage * sum of tree outputs).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class BoostError(ValueError):
    """Invalid boosting input or configuration."""


@dataclass
class BoostConfig:
    n_estimators: int = 100
    max_depth: int = 5
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    ridge: float = 1e-6
    positive_weight: float = 1.0
    subsample: float = 1.0
    seed: int = 0


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.where(active)[0]
            nd = node[rows]
            go_left = x[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.value[node]

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]


class _TreeBuilder:
    def __init__(self, x, grad, hess, weight, cfg: BoostConfig):
        self.x = x
        self.grad = grad
        self.hess = hess
        self.weight = weight
        self.cfg = cfg
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.gain: list[float] = []

    def build(self, rows: np.ndarray, depth: int) -> int:
        idx = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.gain.append(0.0)

        w = self.weight[rows]
        wg = w * self.grad[rows]
        if depth >= self.cfg.max_depth or rows.size < 2 * self.cfg.min_samples_leaf:
            self.value[idx] = self._leaf_value(rows)
            return idx

        best = self._best_split(rows, w, wg)
        if best is None:
            self.value[idx] = self._leaf_value(rows)
            return idx

        feat, thr, gain = best
        go_left = self.x[rows, feat] <= thr
        self.feature[idx] = feat
        self.threshold[idx] = thr
        self.gain[idx] = gain
        self.left[idx] = self.build(rows[go_left], depth + 1)
        self.right[idx] = self.build(rows[~go_left], depth + 1)
        return idx

    def _leaf_value(self, rows: np.ndarray) -> float:
        w = self.weight[rows]
        num = float((w * self.grad[rows]).sum())
        den = float((w * self.hess[rows]).sum()) + self.cfg.ridge
        return num / den

    def _best_split(self, rows, w, wg):
        total_w = w.sum()
        total_wg = wg.sum()
        parent = total_wg * total_wg / total_w
        min_leaf = self.cfg.min_samples_leaf
        best_gain = 1e-12
        best = None
        for feat in range(self.x.shape[1]):
            v = self.x[rows, feat]
            order = np.argsort(v, kind="stable")
            vs = v[order]
            if vs[0] == vs[-1]:
                continue
            cw = np.cumsum(w[order])
            cwg = np.cumsum(wg[order])
            n = rows.size
            pos = np.arange(1, n)  # split after position pos-1
            valid = vs[1:] != vs[:-1]
            valid &= (pos >= min_leaf) & (n - pos >= min_leaf)
            if not valid.any():
                continue
            lw = cw[:-1][valid]
            lg = cwg[:-1][valid]
            rw = total_w - lw
            rg = total_wg - lg
            gains = lg * lg / lw + rg * rg / rw - parent
            k = int(np.argmax(gains))
            if gains[k] > best_gain:
                cut = np.where(valid)[0][k]
                best_gain = float(gains[k])
                best = (feat, float((vs[cut] + vs[cut + 1]) / 2.0), best_gain)
        return best


@dataclass
class GradientBoostedTrees:
    config: BoostConfig
    base_score: float = 0.0
    trees: list[Tree] = field(default_factory=list)
    n_features: int = 0
    feature_gain: np.ndarray | None = None
    train_losses: list[float] = field(default_factory=list)

    def fit(self, x: np.ndarray, y: np.ndarray) -> "GradientBoostedTrees":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] != y.shape[0]:
            raise BoostError(f"bad training shapes {x.shape} / {y.shape}")
        if x.shape[0] < 2 or y.min() == y.max():
            raise BoostError("training needs at least two rows with both classes present")
        if not np.all(np.isfinite(x)):
            raise BoostError("non-finite feature value in the training matrix")

        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        n = x.shape[0]
        self.n_features = x.shape[1]
        self.feature_gain = np.zeros(self.n_features)
        w = np.where(y == 1.0, cfg.positive_weight, 1.0)

        p0 = float((w * y).sum() / w.sum())
        self.base_score = float(np.log(p0 / (1.0 - p0)))
        margins = np.full(n, self.base_score)

        self.trees = []
        self.train_losses = []
        for _ in range(cfg.n_estimators):
            p = 1.0 / (1.0 + np.exp(-margins))
            grad = y - p  # negative gradient of the logistic loss
            hess = p * (1.0 - p)
            if cfg.subsample < 1.0:
                m = max(1, int(round(cfg.subsample * n)))
                rows = np.sort(rng.choice(n, size=m, replace=False))
            else:
                rows = np.arange(n)
            builder = _TreeBuilder(x, grad, hess, w, cfg)
            builder.build(rows, 0)
            tree = Tree(
                feature=np.asarray(builder.feature, dtype=np.int64),
                threshold=np.asarray(builder.threshold),
                left=np.asarray(builder.left, dtype=np.int64),
                right=np.asarray(builder.right, dtype=np.int64),
                value=np.asarray(builder.value),
                gain=np.asarray(builder.gain),
            )
            self.trees.append(tree)
            internal = tree.feature >= 0
            np.add.at(self.feature_gain, tree.feature[internal], tree.gain[internal])
            margins = margins + cfg.learning_rate * tree.predict(x)
            p = 1.0 / (1.0 + np.exp(-margins))
            eps = 1e-12
            loss = -(w * (y * np.log(p + eps) + (1.0 - y) * np.log(1.0 - p + eps))).sum() / w.sum()
            self.train_losses.append(float(loss))
        return self

    def predict_margin(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.n_features and x.shape[1] != self.n_features:
            raise BoostError(f"feature dim {x.shape[1]} does not match fitted {self.n_features}")
        out = np.full(x.shape[0], self.base_score)
        for tree in self.trees:
            out += self.config.learning_rate * tree.predict(x)
        return out

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        margin = self.predict_margin(x)
        return 1.0 / (1.0 + np.exp(-margin))

    def importance(self) -> np.ndarray:
        """Total split gain per feature."""
        if self.feature_gain is None:
            return np.zeros(self.n_features)
        return self.feature_gain.copy()

    def dump_text(self, feature_names: list[str] | None = None) -> str:
        """Readable dump of every tree, for debugging."""
        lines = [f"base_score={self.base_score!r} shrinkage={self.config.learning_rate}"]

        def walk(tree: Tree, node: int, indent: int) -> None:
            pad = "  " * indent
            if tree.feature[node] < 0:
                lines.append(f"{pad}leaf value={tree.value[node]:+.6f}")
                return
            name = (
                feature_names[tree.feature[node]]
                if feature_names is not None
                else f"f{tree.feature[node]}"
            )
            lines.append(f"{pad}{name} <= {tree.threshold[node]:.6g} (gain {tree.gain[node]:.4g})")
            walk(tree, tree.left[node], indent + 1)
            walk(tree, tree.right[node], indent + 1)

        for i, tree in enumerate(self.trees):
            lines.append(f"tree {i}:")
            walk(tree, 0, 1)
        return "\n".join(lines)
