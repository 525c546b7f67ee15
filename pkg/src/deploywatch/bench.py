"""Latency benchmarks: kernel backends head to head, and per-step session
latency at different stream offsets (the step cost must not grow with the
elapsed stream length)."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from deploywatch import kernels
from deploywatch.data import DEFAULT_METRICS, EntityRecord, LabelingScheme, Series, SeriesKey
from deploywatch.evaluate import FeatureCache
from deploywatch.featurizers import default_registry
from deploywatch.hybrid import HybridConfig, HybridModel, TrainingData, train_hybrid
from deploywatch.one_class import OneClassConfig
from deploywatch.stream import EntitySession, SessionConfig
from deploywatch.synth import SynthConfig, generate


def kernel_bench(n_subs: int = 2781, width: int = 100, iters: int = 50, seed: int = 0) -> dict:
    """Median microseconds per scan for every importable backend.

    Half the probe windows are near-copies of history rows (the quiet-stream
    case where early abandoning pays off), half are far-away windows.
    """
    rng = np.random.default_rng(seed)
    subs = np.ascontiguousarray(rng.standard_normal((n_subs, width)))
    near = subs[rng.integers(0, n_subs, iters)] + 0.05 * rng.standard_normal((iters, width))
    far = rng.standard_normal((iters, width)) + 4.0
    out: dict = {"n_subs": n_subs, "width": width, "active": kernels.BACKEND, "backends": {}}
    for name, impl in kernels.available_backends().items():
        timings = {}
        for label, windows in (("near", near), ("far", far)):
            samples = []
            for w in windows:
                w = np.ascontiguousarray(w)
                t0 = time.perf_counter()
                impl.subseq_min_dist(subs, w)
                samples.append((time.perf_counter() - t0) * 1e6)
            timings[label] = statistics.median(samples)
        out["backends"][name] = timings
    return out


def _bench_entity(t_history: int, n_steps: int, seed: int) -> tuple[EntityRecord, np.ndarray]:
    """One entity covering the full catalog (1 service each) plus its quiet stream."""
    rng = np.random.default_rng(seed)
    series = []
    streams = np.empty((len(DEFAULT_METRICS), n_steps))
    for i, metric in enumerate(DEFAULT_METRICS):
        base = rng.uniform(10, 100)
        sd = rng.uniform(0.5, 5.0)
        history = base + sd * rng.standard_normal(t_history)
        streams[i] = base + sd * rng.standard_normal(n_steps)
        series.append(
            Series(
                key=SeriesKey(service="svc0", metric=metric),
                history=history,
                stream=np.empty(0),
            )
        )
    meta = rng.uniform(0, 10, size=8)
    return EntityRecord(id="bench", series=tuple(series), meta=meta), streams


def build_bench_model(t_history: int = 2880, seed: int = 0, quick: bool = False) -> HybridModel:
    """Train a small but real hybrid at the production history length."""
    cfg = SynthConfig(
        n_entities=24 if quick else 48,
        anomaly_rate=0.25,
        unlabeled_frac=0.0,
        t_history=t_history,
        season_period=max(2, t_history // 2),
        stream_mean=12.0,
        stream_min=6,
        stream_max=24,
        seed=seed,
    )
    result = generate(cfg)
    dataset = result.to_dataset(LabelingScheme.HARD)
    cache = FeatureCache.build(dataset, default_registry(dataset.metrics))
    n = cache.labels.shape[0]
    for attempt in range(50):  # two-way split with both classes on each side
        rng = np.random.default_rng(seed + attempt)
        order = rng.permutation(n)
        n_train = int(round(0.7 * n))
        train_idx, val_idx = order[:n_train], order[n_train:]
        if all(
            p.size and cache.labels[p].min() != cache.labels[p].max()
            for p in (train_idx, val_idx)
        ):
            break
    data = TrainingData(
        pooled_train=cache.pooled_labeled[train_idx],
        meta_train=cache.meta_labeled[train_idx],
        y_train=cache.labels[train_idx],
        pooled_val=cache.pooled_labeled[val_idx],
        meta_val=cache.meta_labeled[val_idx],
        y_val=cache.labels[val_idx],
    )
    oc = OneClassConfig(max_epochs=40 if quick else 80, patience=5)
    hybrid_cfg = HybridConfig(
        n_one_class=1 if quick else 3,
        n_gbdt=1 if quick else 3,
        seed=seed,
        one_class=oc,
    )
    return train_hybrid(data, cache.registry, hybrid_cfg, t_history=t_history)


def session_bench(
    model: HybridModel,
    offsets: tuple[int, ...] = (100, 10000),
    window: int = 101,
    t_history: int = 2880,
    seed: int = 0,
) -> dict:
    """Median per-step latency (ms) around each stream offset."""
    n_steps = max(offsets) + window
    entity, streams = _bench_entity(t_history, n_steps, seed)
    session = EntitySession(entity, model, SessionConfig(history_limit=1000))
    keys = [s.key for s in entity.series]
    half = window // 2
    wanted: dict[int, list[float]] = {off: [] for off in offsets}
    for i in range(n_steps):
        values = {keys[j]: float(streams[j, i]) for j in range(len(keys))}
        t0 = time.perf_counter()
        session.step(t_history + 1 + i, values)
        elapsed = (time.perf_counter() - t0) * 1e3
        step_no = i + 1
        for off in offsets:
            if off - half <= step_no <= off + half:
                wanted[off].append(elapsed)
    medians = {off: statistics.median(v) for off, v in wanted.items()}
    return {
        "backend": kernels.BACKEND,
        "t_history": t_history,
        "offsets": list(offsets),
        "median_ms": {str(off): medians[off] for off in offsets},
        "ratio": medians[max(offsets)] / medians[min(offsets)],
    }


def run_bench(
    t_history: int = 2880,
    offsets: tuple[int, ...] = (100, 10000),
    quick: bool = False,
    seed: int = 0,
) -> dict:
    if quick:
        offsets = (50, 300)
        t_history = min(t_history, 600)
    model = build_bench_model(t_history=t_history, seed=seed, quick=quick)
    return {
        "kernel": kernel_bench(
            n_subs=t_history - 100 + 1 if t_history >= 100 else t_history,
            iters=20 if quick else 50,
            seed=seed,
        ),
        "session": session_bench(model, offsets=offsets, t_history=t_history, seed=seed),
    }
