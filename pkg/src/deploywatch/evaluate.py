"""Evaluation protocol: seeded 60/20/20 splits, best-F1 thresholds on
validation, metrics on test, averaged over repeated splits; plus the
experiment runner comparing the detector variants on one dataset.

Featurization is label-free, so the feature cache is built once per
(dataset, registry) and shared by every split and variant.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import numpy as np

from deploywatch.data import Dataset
from deploywatch.features import FeatureSchema, featurize_entities
from deploywatch.featurizers import Registry, default_registry
from deploywatch.hybrid import (
    MODE_MEAN,
    MODE_SEQUENTIAL,
    HybridConfig,
    HybridModel,
    TrainingData,
    train_hybrid,
)
from deploywatch.metrics import Confusion, confusion, select_threshold
from deploywatch.one_class import MODE_DSVDD, OneClassModel, score as oc_score, train_one_class

log = logging.getLogger(__name__)


class EvalError(ValueError):
    pass


@dataclass
class ProtocolConfig:
    n_splits: int = 5
    split_seed: int = 0
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    max_redraws: int = 20


@dataclass
class FeatureCache:
    registry: Registry
    schema: FeatureSchema
    pooled_labeled: np.ndarray
    meta_labeled: np.ndarray
    labels: np.ndarray
    pooled_unlabeled: np.ndarray
    meta_unlabeled: np.ndarray
    labeled_ids: list[str]
    t_history: int

    @classmethod
    def build(cls, dataset: Dataset, registry: Registry | None = None) -> "FeatureCache":
        registry = registry or default_registry(dataset.metrics)
        pooled_l, meta_l = featurize_entities(registry, dataset.labeled)
        pooled_u, meta_u = featurize_entities(registry, dataset.unlabeled)
        return cls(
            registry=registry,
            schema=FeatureSchema.from_registry(registry),
            pooled_labeled=pooled_l,
            meta_labeled=meta_l,
            labels=np.asarray(dataset.labels, dtype=np.int64),
            pooled_unlabeled=pooled_u,
            meta_unlabeled=meta_u,
            labeled_ids=[e.id for e in dataset.labeled],
            t_history=dataset.t_history,
        )


@dataclass
class SplitData:
    cache: FeatureCache
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    seed: int

    def training_data(self) -> TrainingData:
        c = self.cache
        return TrainingData(
            pooled_train=c.pooled_labeled[self.train_idx],
            meta_train=c.meta_labeled[self.train_idx],
            y_train=c.labels[self.train_idx],
            pooled_val=c.pooled_labeled[self.val_idx],
            meta_val=c.meta_labeled[self.val_idx],
            y_val=c.labels[self.val_idx],
            pooled_unlabeled=c.pooled_unlabeled,
            meta_unlabeled=c.meta_unlabeled,
        )

    def y(self, idx: np.ndarray) -> np.ndarray:
        return self.cache.labels[idx]


def make_split(cache: FeatureCache, seed: int, protocol: ProtocolConfig) -> SplitData:
    """Disjoint, exhaustive train/val/test split with both classes everywhere.

    Degenerate draws (any part single-class) are re-drawn with the next
    seed, logged.
    """
    n = cache.labels.shape[0]
    f_train, f_val, _ = protocol.fractions
    for attempt in range(protocol.max_redraws):
        rng = np.random.default_rng(seed + attempt)
        order = rng.permutation(n)
        n_train = int(round(f_train * n))
        n_val = int(round(f_val * n))
        train_idx = order[:n_train]
        val_idx = order[n_train : n_train + n_val]
        test_idx = order[n_train + n_val :]
        parts = (train_idx, val_idx, test_idx)
        if all(p.size > 0 and cache.labels[p].min() != cache.labels[p].max() for p in parts):
            if attempt > 0:
                log.info("split seed %d: re-drawn %d time(s) to avoid a single-class part", seed, attempt)
            return SplitData(cache, train_idx, val_idx, test_idx, seed=seed + attempt)
    raise EvalError(f"could not draw a two-class split in {protocol.max_redraws} attempts")


class Variant(Protocol):
    """One detector under evaluation: fit on a split, then score/decide rows."""

    name: str

    def fit(self, split: SplitData) -> object: ...

    def score(self, state: object, split: SplitData, idx: np.ndarray) -> np.ndarray: ...

    def decide(self, state: object, split: SplitData, idx: np.ndarray) -> np.ndarray: ...


@dataclass
class SplitOutcome:
    confusion: Confusion
    threshold: float | None
    runtime_s: float

    def to_json(self) -> dict:
        c = self.confusion
        return {
            "precision": c.precision,
            "recall": c.recall,
            "f1": c.f1,
            "fpr": c.fpr,
            "tp": c.tp,
            "fp": c.fp,
            "tn": c.tn,
            "fn": c.fn,
            "threshold": self.threshold,
            "runtime_s": self.runtime_s,
        }


@dataclass
class EvalReport:
    variant: str
    splits: list[SplitOutcome] = field(default_factory=list)

    def mean(self, key: str) -> float:
        return float(np.mean([getattr(s.confusion, key) for s in self.splits]))

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "splits": [s.to_json() for s in self.splits],
            "mean": {k: self.mean(k) for k in ("precision", "recall", "f1", "fpr")},
        }


def evaluate(variant: Variant, cache: FeatureCache, protocol: ProtocolConfig) -> EvalReport:
    """Run one variant through the split protocol."""
    report = EvalReport(variant=variant.name)
    for k in range(protocol.n_splits):
        split = make_split(cache, protocol.split_seed + 1000 * k, protocol)
        started = time.perf_counter()
        state = variant.fit(split)
        decisions = variant.decide(state, split, split.test_idx)
        conf = confusion(split.y(split.test_idx), decisions)
        threshold = getattr(state, "threshold", None)
        report.splits.append(
            SplitOutcome(
                confusion=conf,
                threshold=threshold if isinstance(threshold, float) else None,
                runtime_s=time.perf_counter() - started,
            )
        )
    return report


# ---------------------------------------------------------------------------
# the five compared variants, sharing one trained member bundle per split


@dataclass
class _Bundle:
    model: HybridModel  # sequential thresholds fitted inside
    dsvdd_members: list[OneClassModel]
    x_by_idx: Callable[[np.ndarray], np.ndarray]


def _fit_bundle(split: SplitData, hybrid_cfg: HybridConfig, include_dsvdd: bool) -> _Bundle:
    data = split.training_data()
    cfg = replace(hybrid_cfg, mode=MODE_SEQUENTIAL)
    model = train_hybrid(data, split.cache.registry, cfg, t_history=split.cache.t_history)

    cache = split.cache
    assembled: dict[int, np.ndarray] = {}

    def x_by_idx(idx: np.ndarray) -> np.ndarray:
        key = hash(idx.tobytes())
        if key not in assembled:
            assembled[key] = model.assemble(cache.pooled_labeled[idx], cache.meta_labeled[idx])
        return assembled[key]

    dsvdd_members: list[OneClassModel] = []
    if include_dsvdd:
        x_train = x_by_idx(split.train_idx)
        y_train = split.y(split.train_idx)
        x_unlab = model.assemble(cache.pooled_unlabeled, cache.meta_unlabeled)
        normals = np.vstack([x_train[y_train == 0], x_unlab])
        validation = (x_by_idx(split.val_idx), split.y(split.val_idx))
        rng = np.random.default_rng(hybrid_cfg.seed + 77)
        for seed in rng.integers(0, 2**31 - 1, hybrid_cfg.n_one_class):
            cfg_d = replace(hybrid_cfg.one_class, mode=MODE_DSVDD, seed=int(seed))
            member, _ = train_one_class(normals, None, cfg_d, validation)
            dsvdd_members.append(member)
    return _Bundle(model=model, dsvdd_members=dsvdd_members, x_by_idx=x_by_idx)


VARIANT_NAMES = ("one_class", "gbdt", "hybrid_mean", "hybrid_seq", "dsvdd")


def _variant_scores(bundle: _Bundle, name: str, idx: np.ndarray) -> np.ndarray:
    x = bundle.x_by_idx(idx)
    if name == "one_class":
        return bundle.model.one_class_mean(x)
    if name == "gbdt":
        return bundle.model.gbdt_mean(x)
    if name == "hybrid_mean":
        return bundle.model.score_mean(x)
    if name == "dsvdd":
        return np.mean([oc_score(m, x) for m in bundle.dsvdd_members], axis=0)
    raise EvalError(f"no plain scores for variant {name!r}")


@dataclass
class ExperimentConfig:
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    include_dsvdd: bool = True


@dataclass
class ExperimentReport:
    variants: dict[str, EvalReport]
    runtime_s: float
    featurize_s: float
    n_splits: int

    def to_json(self) -> dict:
        return {
            "variants": {name: rep.to_json() for name, rep in self.variants.items()},
            "runtime_s": self.runtime_s,
            "featurize_s": self.featurize_s,
            "n_splits": self.n_splits,
        }

    def to_table(self) -> str:
        header = f"{'variant':<14}{'F1':>8}{'Prec':>8}{'Recall':>8}{'FPR':>8}"
        lines = [header, "-" * len(header)]
        for name, rep in self.variants.items():
            lines.append(
                f"{name:<14}{rep.mean('f1'):>8.3f}{rep.mean('precision'):>8.3f}"
                f"{rep.mean('recall'):>8.3f}{rep.mean('fpr'):>8.3f}"
            )
        lines.append(f"(mean over {self.n_splits} splits)")
        return "\n".join(lines)


def run_experiment(
    dataset: Dataset,
    cfg: ExperimentConfig | None = None,
    registry: Registry | None = None,
    cache: FeatureCache | None = None,
) -> ExperimentReport:
    """Train the member bundle once per split and compare all variants on it."""
    cfg = cfg or ExperimentConfig()
    started = time.perf_counter()
    if cache is None:
        t0 = time.perf_counter()
        cache = FeatureCache.build(dataset, registry)
        featurize_s = time.perf_counter() - t0
    else:
        featurize_s = 0.0

    names = list(VARIANT_NAMES) if cfg.include_dsvdd else [n for n in VARIANT_NAMES if n != "dsvdd"]
    reports = {name: EvalReport(variant=name) for name in names}

    for k in range(cfg.protocol.n_splits):
        split = make_split(cache, cfg.protocol.split_seed + 1000 * k, cfg.protocol)
        t0 = time.perf_counter()
        bundle = _fit_bundle(split, cfg.hybrid, cfg.include_dsvdd)
        fit_s = time.perf_counter() - t0
        y_val = split.y(split.val_idx)
        y_test = split.y(split.test_idx)

        for name in names:
            t1 = time.perf_counter()
            if name == "hybrid_seq":
                decisions = bundle.model.decide(bundle.x_by_idx(split.test_idx))
                threshold = bundle.model.decision_threshold
            else:
                val_scores = _variant_scores(bundle, name, split.val_idx)
                threshold, _ = select_threshold(val_scores, y_val)
                decisions = _variant_scores(bundle, name, split.test_idx) >= threshold
            reports[name].splits.append(
                SplitOutcome(
                    confusion=confusion(y_test, decisions),
                    threshold=float(threshold),
                    runtime_s=fit_s + (time.perf_counter() - t1),
                )
            )
    return ExperimentReport(
        variants=reports,
        runtime_s=time.perf_counter() - started,
        featurize_s=featurize_s,
        n_splits=cfg.protocol.n_splits,
    )
