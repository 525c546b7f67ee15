"""Bagged hybrid of deep one-class members and boosted-tree members.

Two combiners over the same member set:

* mean       — arithmetic mean of all member scores, thresholded once
* sequential — the one-class mean acts as a high-recall filter (stage 1);
  only entities at or above the filter threshold reach the boosted-tree
  mean (stage 2), whose threshold makes the final call

Thresholds are picked on a validation split by best F1 (sequential stage-1
keeps >= `filter_recall` of validation anomalies). The whole model, with
imputation means, feature schema and registry, serializes into one
versioned JSON artifact guarded by a schema hash.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from deploywatch.boosting import BoostConfig, GradientBoostedTrees, Tree
from deploywatch.features import FeatureSchema, TrainingStats, assemble, fit_training_stats
from deploywatch.featurizers import Registry, registry_from_doc, registry_to_doc
from deploywatch.metrics import best_f1, select_threshold
from deploywatch.one_class import (
    OneClassConfig,
    OneClassModel,
    score as oc_score,
    train_one_class,
)

ARTIFACT_FORMAT = "deploywatch-hybrid@1"

MODE_MEAN = "mean"
MODE_SEQUENTIAL = "sequential"


class HybridError(ValueError):
    """Hybrid configuration, schema or artifact violation."""


@dataclass
class HybridConfig:
    n_one_class: int = 3
    n_gbdt: int = 3
    mode: str = MODE_SEQUENTIAL
    seed: int = 0
    one_class: OneClassConfig = field(default_factory=OneClassConfig)
    gbdt: BoostConfig = field(default_factory=lambda: BoostConfig(subsample=0.9))
    filter_recall: float = 0.99
    delta_grid: tuple[float, ...] | None = None  # opt-in {1, 10, 100} search
    oc_seeds: tuple[int, ...] | None = None  # explicit member seeds (testing)
    gb_seeds: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.mode not in (MODE_MEAN, MODE_SEQUENTIAL):
            raise HybridError(f"unknown combiner mode {self.mode!r}")
        if self.n_one_class < 1 or self.n_gbdt < 1:
            raise HybridError("the hybrid needs at least one member of each family")


@dataclass
class TrainingData:
    """Raw featurized splits; imputation stats are fit inside train_hybrid."""

    pooled_train: np.ndarray
    meta_train: np.ndarray
    y_train: np.ndarray
    pooled_val: np.ndarray
    meta_val: np.ndarray
    y_val: np.ndarray
    pooled_unlabeled: np.ndarray | None = None
    meta_unlabeled: np.ndarray | None = None


@dataclass
class HybridModel:
    registry: Registry
    schema: FeatureSchema
    schema_hash: str
    stats: TrainingStats
    oc_members: list[OneClassModel]
    gb_members: list[GradientBoostedTrees]
    mode: str
    decision_threshold: float  # theta2 (sequential) / theta (mean)
    filter_threshold: float | None = None  # theta1, sequential only
    t_history: int | None = None
    version: str = ARTIFACT_FORMAT

    def check_schema(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        width = z.shape[-1]
        if width != self.schema.dim:
            raise HybridError(f"feature width {width} does not match schema dim {self.schema.dim}")
        return np.atleast_2d(z)

    def assemble(self, pooled: np.ndarray, meta: np.ndarray) -> np.ndarray:
        return assemble(pooled, meta, self.stats, self.schema)

    def one_class_mean(self, z: np.ndarray) -> np.ndarray:
        z = self.check_schema(z)
        return np.mean([oc_score(m, z) for m in self.oc_members], axis=0)

    def gbdt_mean(self, z: np.ndarray) -> np.ndarray:
        z = self.check_schema(z)
        return np.mean([m.predict_proba(z) for m in self.gb_members], axis=0)

    def score_mean(self, z: np.ndarray) -> np.ndarray:
        """Mean over all member scores, every member weighted equally."""
        z = self.check_schema(z)
        scores = [oc_score(m, z) for m in self.oc_members]
        scores += [m.predict_proba(z) for m in self.gb_members]
        return np.mean(scores, axis=0)

    def score_sequential(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per row: (stage, stage score, continuous decision score).

        Stage-1 rows report a * theta2 / theta1 so they rank strictly below
        any stage-2 positive under the frozen artifact thresholds.
        """
        if self.filter_threshold is None:
            raise HybridError("sequential scoring needs a fitted filter threshold")
        a = self.one_class_mean(z)
        b = self.gbdt_mean(z)
        theta1 = self.filter_threshold
        theta2 = self.decision_threshold
        stage = np.where(a < theta1, 1, 2)
        scale = theta2 / theta1 if theta1 > 0 else 0.0
        decision_score = np.where(stage == 1, a * scale, b)
        stage_score = np.where(stage == 1, a, b)
        return stage, stage_score, decision_score

    def decide(self, z: np.ndarray, threshold: float | None = None) -> np.ndarray:
        """Binary anomaly decision under the active combiner.

        Sequential semantics are normative: a row is anomalous iff it passed
        the stage-1 filter AND its boosted-tree mean is >= theta2. `threshold`
        overrides theta2 (or theta in mean mode), e.g. for sweeps.
        """
        if self.mode == MODE_MEAN:
            theta = self.decision_threshold if threshold is None else threshold
            return self.score_mean(z) >= theta
        if self.filter_threshold is None:
            raise HybridError("sequential decision needs a fitted filter threshold")
        theta2 = self.decision_threshold if threshold is None else threshold
        a = self.one_class_mean(z)
        b = self.gbdt_mean(z)
        return (a >= self.filter_threshold) & (b >= theta2)

    def score(self, z: np.ndarray) -> np.ndarray:
        """Continuous score under the active combiner (for reports and sweeps)."""
        if self.mode == MODE_MEAN:
            return self.score_mean(z)
        return self.score_sequential(z)[2]

    def summary(self) -> str:
        lines = [
            f"format: {self.version}",
            f"combiner: {self.mode}",
            f"members: {len(self.oc_members)} one-class + {len(self.gb_members)} gbdt",
            f"feature dim: {self.schema.dim} ({self.schema.n_instances} instances x 2 + 8 meta)",
            f"schema hash: {self.schema_hash}",
            f"decision threshold: {self.decision_threshold:.6g}",
        ]
        if self.filter_threshold is not None:
            lines.append(f"filter threshold: {self.filter_threshold:.6g}")
        if self.t_history is not None:
            lines.append(f"history length: {self.t_history}")
        gain = np.sum([m.importance() for m in self.gb_members], axis=0)
        top = np.argsort(gain)[::-1][:5]
        tops = ", ".join(f"{self.schema.names[i]} ({gain[i]:.3g})" for i in top if gain[i] > 0)
        lines.append(f"top gain features: {tops or 'none'}")
        return "\n".join(lines)


def select_filter_threshold(anomaly_scores: np.ndarray, recall: float = 0.99) -> float:
    """Largest threshold keeping at least `recall` of anomaly scores at or above it."""
    scores = np.sort(np.asarray(anomaly_scores, dtype=np.float64))
    if scores.size == 0:
        raise HybridError("filter threshold selection needs validation anomalies")
    allowed_misses = int(math.floor((1.0 - recall) * scores.size))
    return float(scores[allowed_misses])


def train_hybrid(
    data: TrainingData,
    registry: Registry,
    cfg: HybridConfig,
    *,
    t_history: int | None = None,
) -> HybridModel:
    """Fit stats, train members with derived seeds and select thresholds."""
    schema = FeatureSchema.from_registry(registry)
    y_train = np.asarray(data.y_train, dtype=np.int64)
    if y_train.min() == y_train.max():
        raise HybridError("hybrid training needs both classes in the labeled train split")

    pooled_fit = data.pooled_train
    meta_fit = data.meta_train
    have_unlabeled = data.pooled_unlabeled is not None and len(data.pooled_unlabeled) > 0
    if have_unlabeled:
        pooled_fit = np.vstack([pooled_fit, data.pooled_unlabeled])
        meta_fit = np.vstack([meta_fit, data.meta_unlabeled])
    stats = fit_training_stats(pooled_fit, meta_fit, schema)

    x_train = assemble(data.pooled_train, data.meta_train, stats, schema)
    x_val = assemble(data.pooled_val, data.meta_val, stats, schema)
    x_unlabeled = (
        assemble(data.pooled_unlabeled, data.meta_unlabeled, stats, schema)
        if have_unlabeled
        else np.empty((0, schema.dim))
    )
    y_val = np.asarray(data.y_val, dtype=np.int64)

    normals = np.vstack([x_train[y_train == 0], x_unlabeled])
    anomalies = x_train[y_train == 1]
    validation = (x_val, y_val)

    rng = np.random.default_rng(cfg.seed)
    oc_seeds = cfg.oc_seeds or tuple(int(s) for s in rng.integers(0, 2**31 - 1, cfg.n_one_class))
    gb_seeds = cfg.gb_seeds or tuple(int(s) for s in rng.integers(0, 2**31 - 1, cfg.n_gbdt))

    oc_cfg = cfg.one_class
    if cfg.delta_grid:
        probe_scores: list[tuple[float, float]] = []
        for delta in cfg.delta_grid:
            probe_cfg = replace(oc_cfg, delta=float(delta), seed=oc_seeds[0])
            model, _ = train_one_class(normals, anomalies, probe_cfg, validation)
            probe_scores.append((best_f1(oc_score(model, x_val), y_val), float(delta)))
        probe_scores.sort(key=lambda t: (-t[0], t[1]))
        oc_cfg = replace(oc_cfg, delta=probe_scores[0][1])

    oc_members: list[OneClassModel] = []
    for seed in oc_seeds:
        member_cfg = replace(oc_cfg, seed=seed)
        model, _ = train_one_class(normals, anomalies, member_cfg, validation)
        oc_members.append(model)

    gb_members: list[GradientBoostedTrees] = []
    n = x_train.shape[0]
    for seed in gb_seeds:
        member_rng = np.random.default_rng(seed)
        rows = np.sort(member_rng.integers(0, n, size=n))  # bootstrap resample
        if y_train[rows].min() == y_train[rows].max():  # keep both classes present
            rows = np.arange(n)
        gb = GradientBoostedTrees(config=replace(cfg.gbdt, seed=seed))
        gb.fit(x_train[rows], y_train[rows])
        gb_members.append(gb)

    model = HybridModel(
        registry=registry,
        schema=schema,
        schema_hash=schema.hash(),
        stats=stats,
        oc_members=oc_members,
        gb_members=gb_members,
        mode=cfg.mode,
        decision_threshold=0.5,
        filter_threshold=None,
        t_history=t_history,
    )

    if cfg.mode == MODE_SEQUENTIAL:
        a_val = model.one_class_mean(x_val)
        model.filter_threshold = select_filter_threshold(a_val[y_val == 1], cfg.filter_recall)
        b_val = model.gbdt_mean(x_val)
        masked = np.where(a_val >= model.filter_threshold, b_val, -1.0)
        theta2, _ = select_threshold(masked, y_val)
        model.decision_threshold = float(np.clip(theta2, 0.0, 1.0))
    else:
        theta, _ = select_threshold(model.score_mean(x_val), y_val)
        model.decision_threshold = float(theta)
    return model


# ---------------------------------------------------------------------------
# artifact serialization


def _params_to_lists(params: dict[str, np.ndarray]) -> dict:
    return {k: v.tolist() for k, v in params.items()}


def _params_from_lists(doc: dict) -> dict[str, np.ndarray]:
    return {k: np.asarray(v, dtype=np.float64) for k, v in doc.items()}


def _oc_to_doc(m: OneClassModel) -> dict:
    return {
        "params": _params_to_lists(m.params),
        "center": m.center.tolist(),
        "radius": m.radius,
        "mode": m.mode,
        "delta": m.delta,
        "weight_decay": m.weight_decay,
    }


def _oc_from_doc(doc: dict) -> OneClassModel:
    return OneClassModel(
        params=_params_from_lists(doc["params"]),
        center=np.asarray(doc["center"], dtype=np.float64),
        radius=float(doc["radius"]),
        mode=str(doc["mode"]),
        delta=float(doc["delta"]),
        weight_decay=float(doc["weight_decay"]),
    )


def _gb_to_doc(m: GradientBoostedTrees) -> dict:
    return {
        "config": {
            "n_estimators": m.config.n_estimators,
            "max_depth": m.config.max_depth,
            "learning_rate": m.config.learning_rate,
            "min_samples_leaf": m.config.min_samples_leaf,
            "ridge": m.config.ridge,
            "positive_weight": m.config.positive_weight,
            "subsample": m.config.subsample,
            "seed": m.config.seed,
        },
        "base_score": m.base_score,
        "n_features": m.n_features,
        "feature_gain": m.feature_gain.tolist() if m.feature_gain is not None else None,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
                "gain": t.gain.tolist(),
            }
            for t in m.trees
        ],
    }


def _gb_from_doc(doc: dict) -> GradientBoostedTrees:
    gb = GradientBoostedTrees(config=BoostConfig(**doc["config"]))
    gb.base_score = float(doc["base_score"])
    gb.n_features = int(doc["n_features"])
    gb.feature_gain = (
        np.asarray(doc["feature_gain"], dtype=np.float64)
        if doc["feature_gain"] is not None
        else None
    )
    gb.trees = [
        Tree(
            feature=np.asarray(t["feature"], dtype=np.int64),
            threshold=np.asarray(t["threshold"], dtype=np.float64),
            left=np.asarray(t["left"], dtype=np.int64),
            right=np.asarray(t["right"], dtype=np.int64),
            value=np.asarray(t["value"], dtype=np.float64),
            gain=np.asarray(t["gain"], dtype=np.float64),
        )
        for t in doc["trees"]
    ]
    return gb


def save_artifact(model: HybridModel, path: str | Path) -> None:
    doc = {
        "format": ARTIFACT_FORMAT,
        "schema_hash": model.schema_hash,
        "feature_names": list(model.schema.names),
        "registry": registry_to_doc(model.registry),
        "stats": {
            "pooled_means": model.stats.pooled_means.tolist(),
            "meta_mean": model.stats.meta_mean.tolist(),
            "meta_std": model.stats.meta_std.tolist(),
        },
        "one_class_members": [_oc_to_doc(m) for m in model.oc_members],
        "gbdt_members": [_gb_to_doc(m) for m in model.gb_members],
        "combiner": {
            "mode": model.mode,
            "decision_threshold": model.decision_threshold,
            "filter_threshold": model.filter_threshold,
        },
        "t_history": model.t_history,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_artifact(path: str | Path) -> HybridModel:
    """Load and validate an artifact; refuses on format or schema-hash mismatch."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise HybridError(f"{path}: not a valid artifact: {exc}") from exc
    if doc.get("format") != ARTIFACT_FORMAT:
        raise HybridError(f"{path}: unsupported artifact format {doc.get('format')!r}")
    registry = registry_from_doc(doc["registry"])
    schema = FeatureSchema.from_registry(registry)
    if tuple(doc["feature_names"]) != schema.names:
        raise HybridError(f"{path}: feature names disagree with the embedded registry")
    if doc["schema_hash"] != schema.hash():
        raise HybridError(
            f"{path}: schema hash mismatch (artifact {doc['schema_hash'][:12]}..., "
            f"recomputed {schema.hash()[:12]}...); refusing to score"
        )
    stats = TrainingStats(
        pooled_means=np.asarray(doc["stats"]["pooled_means"], dtype=np.float64),
        meta_mean=np.asarray(doc["stats"]["meta_mean"], dtype=np.float64),
        meta_std=np.asarray(doc["stats"]["meta_std"], dtype=np.float64),
    )
    comb = doc["combiner"]
    return HybridModel(
        registry=registry,
        schema=schema,
        schema_hash=doc["schema_hash"],
        stats=stats,
        oc_members=[_oc_from_doc(m) for m in doc["one_class_members"]],
        gb_members=[_gb_from_doc(m) for m in doc["gbdt_members"]],
        mode=str(comb["mode"]),
        decision_threshold=float(comb["decision_threshold"]),
        filter_threshold=(
            float(comb["filter_threshold"]) if comb["filter_threshold"] is not None else None
        ),
        t_history=doc.get("t_history"),
        version=str(doc["format"]),
    )
