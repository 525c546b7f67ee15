import numpy as np
import pytest

from deploywatch.data import EntityRecord, LabelingScheme, Series, SeriesKey
from deploywatch.evaluate import FeatureCache
from deploywatch.featurizers import default_registry
from deploywatch.hybrid import HybridConfig, TrainingData, train_hybrid
from deploywatch.one_class import OneClassConfig
from deploywatch.synth import SynthConfig, generate


def make_entity(
    spec: dict[str, int],
    *,
    t_history: int = 30,
    stream_len: int = 6,
    seed: int = 0,
    ent_id: str = "e0",
    meta: np.ndarray | None = None,
):
    """Entity with `spec[metric] = number of services`, seeded noise series."""
    rng = np.random.default_rng(seed)
    series = []
    for metric, n_services in spec.items():
        for si in range(n_services):
            base = rng.uniform(5, 50)
            sd = rng.uniform(0.5, 3.0)
            series.append(
                Series(
                    key=SeriesKey(service=f"svc{si}", metric=metric),
                    history=base + sd * rng.standard_normal(t_history),
                    stream=base + sd * rng.standard_normal(stream_len),
                )
            )
    if meta is None:
        meta = rng.uniform(0, 10, size=8)
    return EntityRecord(id=ent_id, series=tuple(series), meta=meta)


@pytest.fixture
def entity_factory():
    return make_entity


SMALL_T_HISTORY = 96


def small_synth_config(seed=101, n_entities=140):
    return SynthConfig(
        n_entities=n_entities,
        anomaly_rate=0.2,
        unlabeled_frac=0.2,
        t_history=SMALL_T_HISTORY,
        season_period=48,
        stream_mean=24.0,
        stream_min=12,
        stream_max=40,
        benign_restart_frac=0.1,
        seed=seed,
    )


def train_small_model(result, registry, seed=0, n_members=2):
    """Quick hybrid on a generated collection; shared by stream/service tests."""
    dataset = result.to_dataset(LabelingScheme.HARD)
    cache = FeatureCache.build(dataset, registry)
    n = cache.labels.shape[0]
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_train = int(round(0.7 * n))
    train_idx, val_idx = order[:n_train], order[n_train:]
    data = TrainingData(
        pooled_train=cache.pooled_labeled[train_idx],
        meta_train=cache.meta_labeled[train_idx],
        y_train=cache.labels[train_idx],
        pooled_val=cache.pooled_labeled[val_idx],
        meta_val=cache.meta_labeled[val_idx],
        y_val=cache.labels[val_idx],
        pooled_unlabeled=cache.pooled_unlabeled,
        meta_unlabeled=cache.meta_unlabeled,
    )
    cfg = HybridConfig(
        n_one_class=n_members,
        n_gbdt=n_members,
        seed=seed,
        one_class=OneClassConfig(hidden=32, embed=16, delta=10.0, batch_size=64, max_epochs=40, patience=6),
    )
    return train_hybrid(data, registry, cfg, t_history=dataset.t_history)


@pytest.fixture(scope="session")
def small_world():
    """(synth result, registry, trained hybrid) shared across modules."""
    registry = default_registry().with_windows(subnn=12, forecast=10)
    result = generate(small_synth_config())
    model = train_small_model(result, registry)
    return result, registry, model


def synth_single(seed, kind=None, stream_len=None):
    """One generator-native entity; injected with `kind` when given.

    Stream lengths default to the training distribution so that pooled
    features stay in-distribution for the fixture model.
    """
    cfg = small_synth_config(seed=seed, n_entities=1)
    cfg.anomaly_rate = 1.0 if kind else 0.0
    cfg.unlabeled_frac = 0.0
    cfg.benign_restart_frac = 0.0
    if stream_len is not None:
        cfg.stream_min = cfg.stream_max = stream_len
    if kind:
        cfg.injection_mix = {kind: 1.0}
    result = generate(cfg)
    entity = result.entities[0]
    return entity, result.truth[entity.id]
