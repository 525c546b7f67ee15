"""Pooling, per-metric aggregation and assembly of the fixed feature vector.

Each (instance, series) pair keeps one PoolState tracking the running max
and running mean of its score sequence. Reading a pool is O(1), so the
entity vector can be assembled at any time step. Aggregation takes the max
over the series matching an instance (the most salient service); instances
with no matching series are absent and later mean-imputed from training
entities. Layout: [pooled max | pooled mean | meta], d = 2*n_instances + 8.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from deploywatch.data import META_DIM, EntityRecord, SeriesKey
from deploywatch.featurizers import InstanceState, Registry, extract_meta, init_state


class FeatureError(ValueError):
    """Feature schema or statistics violation."""


class PoolState:
    """Running max / sum / count of one score sequence."""

    __slots__ = ("max", "sum", "count")

    def __init__(self) -> None:
        self.max = -math.inf
        self.sum = 0.0
        self.count = 0

    def update(self, s: float) -> None:
        if s > self.max:
            self.max = s
        self.sum += s
        self.count += 1

    def read(self) -> tuple[float, float]:
        """(running max, running mean); an empty pool reads as (0, 0)."""
        if self.count == 0:
            return 0.0, 0.0
        return self.max, self.sum / self.count


@dataclass(frozen=True)
class FeatureSchema:
    """Stable feature naming and ordering derived from a registry."""

    instance_ids: tuple[str, ...]
    names: tuple[str, ...]

    @classmethod
    def from_registry(cls, registry: Registry) -> "FeatureSchema":
        ids = tuple(i.id for i in registry.instances)
        names = (
            tuple(f"{iid}.max" for iid in ids)
            + tuple(f"{iid}.mean" for iid in ids)
            + tuple(f"meta_{k}" for k in range(META_DIM))
        )
        return cls(instance_ids=ids, names=names)

    @property
    def n_instances(self) -> int:
        return len(self.instance_ids)

    @property
    def pooled_dim(self) -> int:
        return 2 * len(self.instance_ids)

    @property
    def dim(self) -> int:
        return self.pooled_dim + META_DIM

    def hash(self) -> str:
        digest = hashlib.sha256("\n".join(self.names).encode("utf-8"))
        return digest.hexdigest()


@dataclass
class TrainingStats:
    """Imputation means for pooled features and z-score stats for meta."""

    pooled_means: np.ndarray  # (pooled_dim,)
    meta_mean: np.ndarray  # (META_DIM,)
    meta_std: np.ndarray  # (META_DIM,)


def fit_imputation(pooled: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    """Mean over present entries per pooled feature (NaN marks absence)."""
    if pooled.ndim != 2 or pooled.shape[1] != schema.pooled_dim:
        raise FeatureError(f"pooled matrix shape {pooled.shape} does not match schema")
    present = ~np.isnan(pooled)
    empty = ~present.any(axis=0)
    if empty.any():
        name = schema.names[int(np.argmax(empty))]
        raise FeatureError(f"feature {name!r} is absent in every training entity")
    sums = np.where(present, pooled, 0.0).sum(axis=0)
    means = sums / present.sum(axis=0)
    return means


def fit_meta_stats(meta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = meta.mean(axis=0)
    std = np.maximum(meta.std(axis=0), 1e-8)
    return mean, std


def fit_training_stats(pooled: np.ndarray, meta: np.ndarray, schema: FeatureSchema) -> TrainingStats:
    means = fit_imputation(pooled, schema)
    meta_mean, meta_std = fit_meta_stats(meta)
    return TrainingStats(pooled_means=means, meta_mean=meta_mean, meta_std=meta_std)


def assemble(pooled: np.ndarray, meta: np.ndarray, stats: TrainingStats, schema: FeatureSchema) -> np.ndarray:
    """Impute absent pooled entries and append standardized meta features."""
    if pooled.shape[-1] != schema.pooled_dim:
        raise FeatureError(f"pooled width {pooled.shape[-1]} does not match schema")
    filled = np.where(np.isnan(pooled), stats.pooled_means, pooled)
    meta_z = (meta - stats.meta_mean) / stats.meta_std
    return np.concatenate([filled, meta_z], axis=-1)


class EntityFeatureState:
    """Incremental featurization of one entity.

    Holds one scorer state and one pool per (instance, series) pair; a step
    updates them from the new observation vector, and a snapshot aggregates
    pools into the raw pooled vector (NaN for uncovered instances). Both the
    online session and the offline batch path run through this class, which
    is what makes the two bit-identical.
    """

    def __init__(self, registry: Registry, entity: EntityRecord):
        self.registry = registry
        self.entity = entity
        self.meta = extract_meta(entity.meta)
        # pairs[j] = (instance_index, series_key, scorer_state, pool)
        self.pairs: list[tuple[int, SeriesKey, InstanceState, PoolState]] = []
        self._by_series: dict[SeriesKey, list[int]] = {}
        for idx, spec in enumerate(registry.instances):
            for s in entity.series:
                if s.key.metric in spec.metrics:
                    state = init_state(spec, s.history)
                    j = len(self.pairs)
                    self.pairs.append((idx, s.key, state, PoolState()))
                    self._by_series.setdefault(s.key, []).append(j)

    @property
    def n_instance_states(self) -> int:
        return len(self.pairs)

    @property
    def n_pooled_slots(self) -> int:
        # each pool tracks the max and mean slots of one pair
        return 2 * len(self.pairs)

    def update(self, values: dict[SeriesKey, float]) -> None:
        """Consume one observation vector; absent series count as missing."""
        for key, indices in self._by_series.items():
            v = values.get(key, math.nan)
            v = math.nan if v is None else float(v)
            for j in indices:
                _, _, state, pool = self.pairs[j]
                pool.update(state.step(v))

    def snapshot_pooled(self) -> np.ndarray:
        """Raw pooled vector [max block | mean block], NaN where no series matched."""
        n = len(self.registry.instances)
        z_max = np.full(n, np.nan)
        z_mean = np.full(n, np.nan)
        for idx, _, _, pool in self.pairs:
            s_max, s_mean = pool.read()
            if np.isnan(z_max[idx]) or s_max > z_max[idx]:
                z_max[idx] = s_max
            if np.isnan(z_mean[idx]) or s_mean > z_mean[idx]:
                z_mean[idx] = s_mean
        return np.concatenate([z_max, z_mean])


def featurize_entity(registry: Registry, entity: EntityRecord) -> tuple[np.ndarray, np.ndarray]:
    """Replay the full stream and return (raw pooled vector, meta vector)."""
    state = EntityFeatureState(registry, entity)
    by_key = entity.series_by_key()
    for t in range(entity.stream_length):
        state.update({key: float(s.stream[t]) for key, s in by_key.items()})
    return state.snapshot_pooled(), state.meta


def featurize_entities(
    registry: Registry, entities: list[EntityRecord]
) -> tuple[np.ndarray, np.ndarray]:
    """Stack featurize_entity over a list: (pooled N x 2K, meta N x 8)."""
    schema = FeatureSchema.from_registry(registry)
    pooled = np.empty((len(entities), schema.pooled_dim))
    meta = np.empty((len(entities), META_DIM))
    for i, e in enumerate(entities):
        pooled[i], meta[i] = featurize_entity(registry, e)
    return pooled, meta


def export_features_csv(
    path: str | Path, matrix: np.ndarray, schema: FeatureSchema, ids: list[str] | None = None
) -> None:
    """Dump an assembled feature matrix with the schema header row."""
    if matrix.ndim != 2 or matrix.shape[1] != schema.dim:
        raise FeatureError(f"matrix shape {matrix.shape} does not match schema dim {schema.dim}")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow((["id"] if ids is not None else []) + list(schema.names))
        for i, row in enumerate(matrix):
            prefix = [ids[i]] if ids is not None else []
            writer.writerow(prefix + [repr(float(v)) for v in row])
