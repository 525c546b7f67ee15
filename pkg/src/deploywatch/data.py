"""Domain types and JSONL dataset handling for deployment entities.

An entity is one deployment: a bundle of (service, metric) time series with a
shared pre-launch history window, a post-launch stream, eight numeric meta
features and optionally a set of human label scores in {-1, 0, 1, 2, 3}.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

META_DIM = 8
VALID_SCORES = frozenset({-1, 0, 1, 2, 3})
ABNORMAL_SCORES = frozenset({2, 3})
NORMAL_SCORES = frozenset({0, 1})

#: Fixed catalog of monitored metrics (22 entries). The catalog travels with
#: every dataset header; this is the default used by the synthetic generator.
DEFAULT_METRICS: tuple[str, ...] = (
    "cpu_usage",
    "memory_usage",
    "threads",
    "load_average",
    "queue_depth",
    "heap_usage",
    "gc_time",
    "open_connections",
    "swap_usage",
    "network_in",
    "network_out",
    "disk_io_read",
    "disk_io_write",
    "request_rate",
    "latency_p50",
    "latency_p99",
    "error_rate",
    "fault_count",
    "timeout_count",
    "retry_count",
    "cache_hit_rate",
    "heartbeat",
)

DEFAULT_T_HISTORY = 2880  # two days of minute-wise observations


class DatasetError(ValueError):
    """A dataset file or entity record violates the schema."""


class LabelingScheme(str, Enum):
    """How multi-judge score sets binarize into anomaly labels."""

    HARD = "hard"
    SOFT = "soft"
    NAIVE = "naive"


@dataclass(frozen=True)
class SeriesKey:
    """Unique label of one univariate series within an entity."""

    service: str
    metric: str


@dataclass(frozen=True, eq=False)
class Series:
    """One (service, metric) series: pre-launch history plus live stream.

    Missing observations are NaN. History has the dataset-wide length T;
    stream length is shared by all series of the same entity.
    """

    key: SeriesKey
    history: np.ndarray
    stream: np.ndarray


@dataclass(frozen=True, eq=False)
class EntityRecord:
    """One deployment entity, immutable after load."""

    id: str
    series: tuple[Series, ...]
    meta: np.ndarray
    label_scores: tuple[int, ...] = ()

    @property
    def n_series(self) -> int:
        return len(self.series)

    @property
    def stream_length(self) -> int:
        return int(self.series[0].stream.shape[0])

    @property
    def t_history(self) -> int:
        return int(self.series[0].history.shape[0])

    def series_by_key(self) -> dict[SeriesKey, Series]:
        return {s.key: s for s in self.series}


@dataclass
class Dataset:
    """A loaded entity collection split into labeled and unlabeled pools."""

    t_history: int
    metrics: tuple[str, ...]
    labeled: list[EntityRecord]
    labels: np.ndarray  # int array aligned with `labeled`
    unlabeled: list[EntityRecord]

    @property
    def n_anomalies(self) -> int:
        return int(self.labels.sum())


def binarize(scores: Iterable[int], scheme: LabelingScheme) -> int | None:
    """Collapse a set of judge scores into a binary label.

    hard: 1 iff every judge scored 3. soft: 1 iff every score is 2 or 3.
    naive: like soft, but 0 only when every score is 0 or 1; mixed sets and
    any -1 exclude the entity (returns None). Empty score sets return None.
    """
    scores = tuple(scores)
    for s in scores:
        if s not in VALID_SCORES:
            raise ValueError(f"label score {s!r} outside {{-1, 0, 1, 2, 3}}")
    if not scores:
        return None
    if scheme is LabelingScheme.HARD:
        return 1 if all(s == 3 for s in scores) else 0
    if scheme is LabelingScheme.SOFT:
        return 1 if all(s in ABNORMAL_SCORES for s in scores) else 0
    if scheme is LabelingScheme.NAIVE:
        if all(s in ABNORMAL_SCORES for s in scores):
            return 1
        if all(s in NORMAL_SCORES for s in scores):
            return 0
        return None
    raise ValueError(f"unknown labeling scheme {scheme!r}")


def _as_value_array(values: list, *, what: str, entity: str) -> np.ndarray:
    out = np.empty(len(values), dtype=np.float64)
    for i, v in enumerate(values):
        if v is None:
            out[i] = np.nan
        elif isinstance(v, (int, float)) and not isinstance(v, bool):
            if not math.isfinite(v):
                raise DatasetError(f"entity {entity!r}: non-finite {what} value {v!r}")
            out[i] = float(v)
        else:
            raise DatasetError(f"entity {entity!r}: bad {what} value {v!r}")
    out.flags.writeable = False
    return out


def entity_from_json(obj: dict, *, t_history: int | None = None, catalog: tuple[str, ...] | None = None) -> EntityRecord:
    """Build and validate an EntityRecord from its JSON form."""
    if not isinstance(obj, dict):
        raise DatasetError("entity record is not a JSON object")
    ent_id = obj.get("id")
    if not isinstance(ent_id, str) or not ent_id:
        raise DatasetError("entity is missing a string 'id'")
    raw_series = obj.get("series")
    if not isinstance(raw_series, list) or not raw_series:
        raise DatasetError(f"entity {ent_id!r}: needs at least one series")
    if t_history is not None and "t_history" in obj and obj["t_history"] != t_history:
        raise DatasetError(
            f"entity {ent_id!r}: t_history {obj['t_history']} disagrees with header {t_history}"
        )

    series: list[Series] = []
    seen: set[SeriesKey] = set()
    hist_len: int | None = t_history
    stream_len: int | None = None
    for rs in raw_series:
        if not isinstance(rs, dict):
            raise DatasetError(f"entity {ent_id!r}: series entry is not an object")
        key = SeriesKey(service=str(rs.get("service", "")), metric=str(rs.get("metric", "")))
        if not key.service or not key.metric:
            raise DatasetError(f"entity {ent_id!r}: series needs 'service' and 'metric'")
        if catalog is not None and key.metric not in catalog:
            raise DatasetError(f"entity {ent_id!r}: metric {key.metric!r} not in catalog")
        if key in seen:
            raise DatasetError(f"entity {ent_id!r}: duplicate series key {key}")
        seen.add(key)
        hist = _as_value_array(rs.get("history", []), what="history", entity=ent_id)
        strm = _as_value_array(rs.get("stream", []), what="stream", entity=ent_id)
        if hist_len is None:
            hist_len = hist.shape[0]
        elif hist.shape[0] != hist_len:
            raise DatasetError(
                f"entity {ent_id!r}: history length {hist.shape[0]} != expected {hist_len}"
            )
        if stream_len is None:
            stream_len = strm.shape[0]
        elif strm.shape[0] != stream_len:
            raise DatasetError(f"entity {ent_id!r}: stream lengths differ across series")
        series.append(Series(key=key, history=hist, stream=strm))

    if hist_len is not None and hist_len < 1:
        raise DatasetError(f"entity {ent_id!r}: empty history")

    meta_raw = obj.get("meta")
    if not isinstance(meta_raw, list) or len(meta_raw) != META_DIM:
        raise DatasetError(f"entity {ent_id!r}: meta must hold exactly {META_DIM} numbers")
    meta = np.asarray(meta_raw, dtype=np.float64)
    if not np.all(np.isfinite(meta)):
        raise DatasetError(f"entity {ent_id!r}: meta features must be finite")
    meta.flags.writeable = False

    scores_raw = obj.get("scores", [])
    if not isinstance(scores_raw, list):
        raise DatasetError(f"entity {ent_id!r}: scores must be a list")
    scores: list[int] = []
    for s in scores_raw:
        if not isinstance(s, int) or isinstance(s, bool) or s not in VALID_SCORES:
            raise DatasetError(f"entity {ent_id!r}: label score {s!r} outside {{-1..3}}")
        scores.append(s)

    return EntityRecord(id=ent_id, series=tuple(series), meta=meta, label_scores=tuple(scores))


def entity_to_json(entity: EntityRecord, *, t_history: int | None = None) -> dict:
    def vals(a: np.ndarray) -> list:
        return [None if math.isnan(v) else float(v) for v in a.tolist()]

    return {
        "id": entity.id,
        "t_history": int(t_history if t_history is not None else entity.t_history),
        "series": [
            {
                "service": s.key.service,
                "metric": s.key.metric,
                "history": vals(s.history),
                "stream": vals(s.stream),
            }
            for s in entity.series
        ],
        "meta": [float(v) for v in entity.meta.tolist()],
        "scores": list(entity.label_scores),
    }


def load_dataset(path: str | Path, scheme: LabelingScheme) -> Dataset:
    """Load a JSONL dataset and binarize labels under `scheme`.

    The first line must be a header record declaring `t_history` and the
    metric catalog. Entities with empty score sets land in the unlabeled
    pool; naive-excluded entities are dropped.
    """
    path = Path(path)
    labeled: list[EntityRecord] = []
    labels: list[int] = []
    unlabeled: list[EntityRecord] = []
    t_history: int | None = None
    metrics: tuple[str, ...] | None = None
    seen_ids: set[str] = set()
    excluded = 0

    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if lineno == 1 or (t_history is None and "t_history" in obj and "id" not in obj):
                if "id" in obj:
                    raise DatasetError(f"{path}:1: first line must be the header record")
                try:
                    t_history = int(obj["t_history"])
                    metrics = tuple(str(m) for m in obj["metrics"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise DatasetError(f"{path}:1: header needs 't_history' and 'metrics'") from exc
                if t_history < 1 or not metrics:
                    raise DatasetError(f"{path}:1: header values out of range")
                continue
            try:
                entity = entity_from_json(obj, t_history=t_history, catalog=metrics)
            except DatasetError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
            if entity.id in seen_ids:
                raise DatasetError(f"{path}:{lineno}: duplicate entity id {entity.id!r}")
            seen_ids.add(entity.id)
            if not entity.label_scores:
                unlabeled.append(entity)
                continue
            try:
                y = binarize(entity.label_scores, scheme)
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: entity {entity.id!r}: {exc}") from exc
            if y is None:
                excluded += 1
                continue
            labeled.append(entity)
            labels.append(y)

    if t_history is None or metrics is None:
        raise DatasetError(f"{path}: missing header record")
    if excluded:
        log.info("excluded %d entities with ambiguous scores under %s", excluded, scheme.value)
    return Dataset(
        t_history=t_history,
        metrics=metrics,
        labeled=labeled,
        labels=np.asarray(labels, dtype=np.int64),
        unlabeled=unlabeled,
    )


def save_dataset(
    path: str | Path,
    entities: Iterable[EntityRecord],
    *,
    t_history: int,
    metrics: tuple[str, ...],
) -> None:
    """Write a JSONL dataset (header record first). Inverse of load_dataset."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"t_history": int(t_history), "metrics": list(metrics)}) + "\n")
        for entity in entities:
            fh.write(json.dumps(entity_to_json(entity, t_history=t_history)) + "\n")
