"""Synthetic heterogeneous-deployment generator with anomaly injection.

Stands in for proprietary telemetry at desk scale. Normal series are
stationary noise plus daily seasonality with per-series level and scale;
anomalous entities get one injection in the post-launch stream. The
injection taxonomy is chosen to exercise every featurizer family:

* level_shift      — sustained +5..8 sigma shift on a stat-monitored metric
* spike_train      — repeated short spikes (shape anomaly, sub-rule width)
* missing_run      — a gap run on the heartbeat metric (gap rule only)
* threshold_burst  — raw error-rate burst crossing the fixed rule threshold
  while staying low in sigma units (mostly invisible to algorithm scorers)
* subtle_shift     — mild +2..3 sigma shift on an unruled metric

A configurable fraction of normal entities are "benign restarts" (a short
spike flurry right after launch, labeled normal) so that one-class distance
alone cannot separate labels. Everything is driven by one seeded generator;
the same seed reproduces files byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from deploywatch.data import (
    DEFAULT_METRICS,
    Dataset,
    EntityRecord,
    LabelingScheme,
    Series,
    SeriesKey,
    binarize,
    save_dataset,
)

INJECTION_KINDS = ("level_shift", "spike_train", "missing_run", "threshold_burst", "subtle_shift")

#: metrics with a stat_threshold rule in the default registry
STAT_RULED = (
    "cpu_usage",
    "memory_usage",
    "threads",
    "load_average",
    "queue_depth",
    "heap_usage",
    "latency_p50",
    "request_rate",
)
#: metrics without any rule instance, targets for subtle shifts
UNRULED = ("network_in", "network_out", "disk_io_read", "disk_io_write", "swap_usage", "cache_hit_rate")


class SynthError(ValueError):
    """Infeasible generator configuration."""


@dataclass
class SynthConfig:
    n_entities: int = 200
    anomaly_rate: float = 0.1  # among labeled entities
    unlabeled_frac: float = 0.0
    unlabeled_purity: float = 0.98  # clean fraction of the unlabeled pool
    t_history: int = 288
    season_period: int = 144
    stream_mean: float = 16.0
    stream_min: int = 2
    stream_max: int = 200
    metrics: tuple[str, ...] = DEFAULT_METRICS
    core_metrics: tuple[str, ...] = (
        "cpu_usage",
        "memory_usage",
        "threads",
        "request_rate",
        "error_rate",
        "heartbeat",
    )
    extra_metrics_max: int = 8
    multi_service_prob: float = 0.25
    max_services: int = 3
    injection_mix: dict[str, float] = field(
        default_factory=lambda: {
            "level_shift": 0.25,
            "spike_train": 0.2,
            "missing_run": 0.2,
            "threshold_burst": 0.2,
            "subtle_shift": 0.15,
        }
    )
    benign_restart_frac: float = 0.0  # hard normals among the clean pool
    label_noise: float = 0.0
    missing_rate: float = 0.003
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 <= self.anomaly_rate <= 1.0):
            raise SynthError(f"anomaly rate {self.anomaly_rate} outside [0, 1]")
        if not (0.0 <= self.unlabeled_frac <= 1.0):
            raise SynthError("unlabeled fraction outside [0, 1]")
        if not (0.0 <= self.unlabeled_purity <= 1.0):
            raise SynthError("unlabeled purity outside [0, 1]")
        if self.n_entities < 1 or self.t_history < 2:
            raise SynthError("need n_entities >= 1 and t_history >= 2")
        if abs(sum(self.injection_mix.values()) - 1.0) > 1e-9:
            raise SynthError("injection mix must sum to 1")
        unknown = set(self.injection_mix) - set(INJECTION_KINDS)
        if unknown:
            raise SynthError(f"unknown injection kinds {sorted(unknown)}")


@dataclass
class SynthResult:
    entities: list[EntityRecord]
    t_history: int
    metrics: tuple[str, ...]
    truth: dict[str, dict]  # entity id -> {"injected": bool, "kind": str | None, ...}

    def write(self, path) -> None:
        save_dataset(path, self.entities, t_history=self.t_history, metrics=self.metrics)

    def to_dataset(self, scheme: LabelingScheme = LabelingScheme.HARD) -> Dataset:
        """In-memory equivalent of write + load under the given scheme."""
        labeled, labels, unlabeled = [], [], []
        for e in self.entities:
            if not e.label_scores:
                unlabeled.append(e)
                continue
            y = binarize(e.label_scores, scheme)
            if y is None:
                continue
            labeled.append(e)
            labels.append(y)
        return Dataset(
            t_history=self.t_history,
            metrics=self.metrics,
            labeled=labeled,
            labels=np.asarray(labels, dtype=np.int64),
            unlabeled=unlabeled,
        )


# (base low, base high, amplitude high, noise low, noise high, nonneg)
_PROFILES: dict[str, tuple[float, float, float, float, float, bool]] = {
    "cpu_usage": (20, 70, 8, 1.0, 4.0, True),
    "memory_usage": (30, 80, 4, 0.5, 2.0, True),
    "threads": (50, 400, 30, 2.0, 10.0, True),
    "load_average": (0.5, 6.0, 1.0, 0.1, 0.5, True),
    "queue_depth": (2, 40, 6, 0.5, 3.0, True),
    "heap_usage": (30, 75, 5, 0.5, 2.5, True),
    "gc_time": (5, 60, 8, 0.5, 4.0, True),
    "open_connections": (20, 300, 25, 2.0, 12.0, True),
    "swap_usage": (1, 20, 2, 0.2, 1.5, True),
    "network_in": (100, 2000, 200, 10, 80, True),
    "network_out": (100, 2000, 200, 10, 80, True),
    "disk_io_read": (50, 800, 80, 5, 40, True),
    "disk_io_write": (50, 800, 80, 5, 40, True),
    "request_rate": (50, 1000, 100, 5, 40, True),
    "latency_p50": (50, 400, 30, 2, 15, True),
    "latency_p99": (150, 1200, 80, 10, 60, True),
    "error_rate": (0.01, 0.06, 0.005, 0.08, 0.14, True),
    "fault_count": (0.0, 0.4, 0.1, 0.1, 0.4, True),
    "timeout_count": (0.0, 0.3, 0.1, 0.05, 0.3, True),
    "retry_count": (0.0, 2.0, 0.5, 0.2, 1.5, True),
    "cache_hit_rate": (60, 95, 3, 0.5, 2.0, True),
    "heartbeat": (1.0, 1.0, 0.0, 0.005, 0.02, True),
}
_DEFAULT_PROFILE = (10, 100, 10, 0.5, 5.0, True)


class _SeriesGen:
    """Seasonal noise process for one series; sigma is known for injections."""

    def __init__(self, metric: str, rng: np.random.Generator):
        base_lo, base_hi, amp_hi, sd_lo, sd_hi, nonneg = _PROFILES.get(metric, _DEFAULT_PROFILE)
        self.base = rng.uniform(base_lo, base_hi)
        self.amp = rng.uniform(0.0, amp_hi)
        self.sd = rng.uniform(sd_lo, sd_hi)
        self.phase = rng.uniform(0.0, 2.0 * math.pi)
        self.nonneg = nonneg

    def sample(self, t0: int, n: int, period: int, rng: np.random.Generator) -> np.ndarray:
        t = np.arange(t0, t0 + n)
        vals = (
            self.base
            + self.amp * np.sin(2.0 * math.pi * t / period + self.phase)
            + self.sd * rng.standard_normal(n)
        )
        if self.nonneg:
            vals = np.maximum(vals, 0.0)
        return vals


def _sprinkle_missing(values: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    if rate <= 0:
        return values
    mask = rng.random(values.shape[0]) < rate
    out = values.copy()
    out[mask] = np.nan
    return out


def _pick_injection(cfg: SynthConfig, rng: np.random.Generator) -> str:
    kinds = sorted(cfg.injection_mix)
    probs = np.array([cfg.injection_mix[k] for k in kinds])
    return str(rng.choice(kinds, p=probs / probs.sum()))


def _inject(
    kind: str,
    streams: dict[SeriesKey, np.ndarray],
    gens: dict[SeriesKey, _SeriesGen],
    rng: np.random.Generator,
) -> tuple[str, dict]:
    """Apply one injection in place; returns (kind actually applied, details)."""
    n = next(iter(streams.values())).shape[0]
    keys = list(streams)

    def keys_for(metrics: tuple[str, ...]) -> list[SeriesKey]:
        return [k for k in keys if k.metric in metrics]

    if kind == "missing_run" and not keys_for(("heartbeat",)):
        kind = "level_shift"
    if kind == "threshold_burst" and not keys_for(("error_rate", "fault_count")):
        kind = "level_shift"
    if kind == "level_shift" and not keys_for(STAT_RULED):
        kind = "subtle_shift"
    if kind == "subtle_shift" and not keys_for(UNRULED):
        kind = "spike_train"

    if kind == "level_shift":
        cands = keys_for(STAT_RULED)
        key = cands[int(rng.integers(len(cands)))]
        onset = int(rng.integers(1, max(2, n // 3)))
        shift = rng.uniform(5.0, 8.0) * gens[key].sd
        streams[key][onset:] = streams[key][onset:] + shift
        detail = {"metric": key.metric, "onset": onset}
    elif kind == "spike_train":
        key = keys[int(rng.integers(len(keys)))]
        while key.metric == "heartbeat":
            key = keys[int(rng.integers(len(keys)))]
        onset = int(rng.integers(1, max(2, n // 4)))
        height = rng.uniform(4.0, 7.0) * gens[key].sd
        spacing = int(rng.integers(3, 6))
        for i, pos in enumerate(range(onset, n, spacing)):
            if i >= 10:
                break
            streams[key][pos : pos + 2] = streams[key][pos : pos + 2] + height
        detail = {"metric": key.metric, "onset": onset}
    elif kind == "missing_run":
        key = keys_for(("heartbeat",))[0]
        run = int(rng.integers(7, max(8, min(n, 14))))
        onset = int(rng.integers(0, max(1, n - run + 1)))
        streams[key][onset : onset + run] = np.nan
        detail = {"metric": key.metric, "onset": onset, "run": run}
    elif kind == "threshold_burst":
        candidates = keys_for(("error_rate", "fault_count"))
        key = candidates[int(rng.integers(len(candidates)))]
        onset = int(rng.integers(1, max(2, n // 3)))
        dur = int(rng.integers(6, max(7, min(n - onset + 1, 16))))
        if key.metric == "error_rate":
            burst = rng.uniform(0.28, 0.42)
        else:
            burst = rng.uniform(5.5, 9.0)
        seg = streams[key][onset : onset + dur]
        streams[key][onset : onset + dur] = burst + 0.1 * gens[key].sd * rng.standard_normal(
            seg.shape[0]
        )
        detail = {"metric": key.metric, "onset": onset, "duration": dur}
    elif kind == "subtle_shift":
        cands = keys_for(UNRULED)
        key = cands[int(rng.integers(len(cands)))]
        onset = int(rng.integers(1, max(2, n // 3)))
        shift = rng.uniform(2.0, 3.0) * gens[key].sd
        streams[key][onset:] = streams[key][onset:] + shift
        detail = {"metric": key.metric, "onset": onset}
    else:
        raise SynthError(f"unknown injection kind {kind!r}")
    return kind, detail


def _benign_restart(
    streams: dict[SeriesKey, np.ndarray],
    gens: dict[SeriesKey, _SeriesGen],
    rng: np.random.Generator,
) -> None:
    """Short spike flurry right after launch on a load metric; labeled normal."""
    cands = [k for k in streams if k.metric in ("cpu_usage", "threads", "request_rate")]
    if not cands:
        cands = [k for k in streams if k.metric != "heartbeat"]
    if not cands:
        return
    key = cands[int(rng.integers(len(cands)))]
    n = streams[key].shape[0]
    height = rng.uniform(3.0, 4.5) * gens[key].sd
    for pos in range(0, min(5, n), 2):
        streams[key][pos : pos + 2] = streams[key][pos : pos + 2] + height


def _entity_scores(anomalous: bool, flipped: bool, rng: np.random.Generator) -> tuple[int, ...]:
    y = anomalous != flipped
    if y:
        return (3, 3) if rng.random() < 0.3 else (3,)
    return (0, 1) if rng.random() < 0.3 else (0,)


def generate(cfg: SynthConfig) -> SynthResult:
    """Generate the full entity collection for one seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)

    n_unlabeled = int(round(cfg.n_entities * cfg.unlabeled_frac))
    n_labeled = cfg.n_entities - n_unlabeled
    n_anom_labeled = int(round(n_labeled * cfg.anomaly_rate))
    n_anom_unlabeled = int(round(n_unlabeled * (1.0 - cfg.unlabeled_purity)))

    roles = ["labeled_anom"] * n_anom_labeled + ["labeled_clean"] * (n_labeled - n_anom_labeled)
    roles += ["unlabeled_anom"] * n_anom_unlabeled
    roles += ["unlabeled_clean"] * (n_unlabeled - n_anom_unlabeled)
    rng.shuffle(roles)

    entities: list[EntityRecord] = []
    truth: dict[str, dict] = {}
    for i, role in enumerate(roles):
        ent_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
        anomalous = role.endswith("_anom")

        metric_set = list(cfg.core_metrics)
        extras = [m for m in cfg.metrics if m not in cfg.core_metrics]
        ent_rng.shuffle(extras)
        n_extra = int(ent_rng.integers(0, cfg.extra_metrics_max + 1))
        metric_set += extras[:n_extra]

        n_steps = int(
            np.clip(ent_rng.geometric(1.0 / cfg.stream_mean), cfg.stream_min, cfg.stream_max)
        )
        if anomalous:
            n_steps = max(n_steps, 12)  # room for an injection

        gens: dict[SeriesKey, _SeriesGen] = {}
        histories: dict[SeriesKey, np.ndarray] = {}
        streams: dict[SeriesKey, np.ndarray] = {}
        for metric in metric_set:
            n_services = 1
            if metric != "heartbeat" and ent_rng.random() < cfg.multi_service_prob:
                n_services = int(ent_rng.integers(2, cfg.max_services + 1))
            for si in range(n_services):
                key = SeriesKey(service=f"svc{si}", metric=metric)
                gen = _SeriesGen(metric, ent_rng)
                gens[key] = gen
                hist = gen.sample(0, cfg.t_history, cfg.season_period, ent_rng)
                strm = gen.sample(cfg.t_history, n_steps, cfg.season_period, ent_rng)
                histories[key] = _sprinkle_missing(hist, cfg.missing_rate, ent_rng)
                streams[key] = _sprinkle_missing(strm, cfg.missing_rate, ent_rng)

        kind: str | None = None
        detail: dict = {}
        if anomalous:
            kind, detail = _inject(_pick_injection(cfg, ent_rng), streams, gens, ent_rng)
        elif ent_rng.random() < cfg.benign_restart_frac:
            _benign_restart(streams, gens, ent_rng)

        meta = np.array(
            [
                float(len({k.service for k in gens})),  # services
                float(ent_rng.integers(1, 50)),  # hosts
                float(len(gens)),  # series
                float(ent_rng.lognormal(3.0, 1.0)),  # package size
                float(ent_rng.integers(1, 6)),  # rollout waves
                float(ent_rng.integers(0, 12)),  # region code
                float(ent_rng.lognormal(2.0, 0.8)),  # fleet size
                float(ent_rng.integers(0, 200)),  # prior deploys
            ]
        )

        labeled = role.startswith("labeled")
        flipped = bool(labeled and cfg.label_noise > 0 and ent_rng.random() < cfg.label_noise)
        scores = _entity_scores(anomalous, flipped, ent_rng) if labeled else ()

        series = tuple(
            Series(key=key, history=histories[key], stream=streams[key])
            for key in sorted(gens, key=lambda k: (k.metric, k.service))
        )
        ent_id = f"dep-{cfg.seed}-{i:05d}"
        entities.append(
            EntityRecord(id=ent_id, series=series, meta=meta, label_scores=scores)
        )
        truth[ent_id] = {
            "injected": anomalous,
            "kind": kind,
            "detail": detail,
            "labeled": labeled,
            "label_flipped": flipped,
        }

    return SynthResult(
        entities=entities, t_history=cfg.t_history, metrics=cfg.metrics, truth=truth
    )


def benchmark_config(seed: int = 0, n_entities: int = 420) -> SynthConfig:
    """Desk-scale benchmark: short histories, activated algorithm windows,
    hard normals, and an injection mix covering every featurizer family."""
    return SynthConfig(
        n_entities=n_entities,
        anomaly_rate=0.18,
        unlabeled_frac=0.35,
        unlabeled_purity=0.98,
        t_history=288,
        season_period=144,
        stream_mean=40.0,
        stream_min=20,
        stream_max=90,
        benign_restart_frac=0.15,
        label_noise=0.0,
        seed=seed,
    )
