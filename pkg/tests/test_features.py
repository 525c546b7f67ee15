import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deploywatch.data import DEFAULT_METRICS
from deploywatch.features import (
    EntityFeatureState,
    FeatureError,
    FeatureSchema,
    PoolState,
    TrainingStats,
    assemble,
    export_features_csv,
    featurize_entities,
    featurize_entity,
    fit_imputation,
    fit_training_stats,
)
from deploywatch.featurizers import default_registry


def small_registry():
    return default_registry().with_windows(subnn=8, forecast=6)

from conftest import make_entity


class TestPoolState:
    def test_direct_example(self):
        pool = PoolState()
        for s in (0.0, 1.0, 0.0):
            pool.update(s)
        assert pool.read() == (1.0, pytest.approx(1.0 / 3.0))

    def test_empty_read_is_zero(self):
        assert PoolState().read() == (0.0, 0.0)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=40))
    def test_incremental_equals_batch(self, values):
        pool = PoolState()
        for v in values:
            pool.update(v)
        s_max, s_mean = pool.read()
        assert s_max == max(values)
        # batch reference summed in the same order
        total = 0.0
        for v in values:
            total += v
        assert s_mean == total / len(values)

    @given(st.lists(st.floats(0, 50), min_size=1, max_size=30))
    def test_running_max_nondecreasing(self, values):
        pool = PoolState()
        maxes = []
        for v in values:
            pool.update(v)
            maxes.append(pool.read()[0])
        assert maxes == sorted(maxes)


class TestSchema:
    def test_default_dim_134(self):
        schema = FeatureSchema.from_registry(default_registry())
        assert schema.n_instances == 63
        assert schema.pooled_dim == 126
        assert schema.dim == 134
        assert len(schema.names) == 134

    def test_layout_max_then_mean_then_meta(self):
        schema = FeatureSchema.from_registry(default_registry())
        assert schema.names[0].endswith(".max")
        assert schema.names[63].endswith(".mean")
        assert schema.names[126] == "meta_0"

    def test_hash_changes_with_registry(self):
        full = FeatureSchema.from_registry(default_registry())
        partial = FeatureSchema.from_registry(
            default_registry().without_kinds({"stat_threshold"})
        )
        assert full.hash() != partial.hash()


class TestAggregation:
    def test_max_over_services(self, entity_factory):
        registry = small_registry()
        entity = entity_factory({"cpu_usage": 2}, seed=3)
        state = EntityFeatureState(registry, entity)
        # drive the two series apart through one step
        k0, k1 = [s.key for s in entity.series]
        state.update({k0: 1e9, k1: entity.series[1].stream[0]})
        pooled = state.snapshot_pooled()
        schema = FeatureSchema.from_registry(registry)
        idx = schema.names.index("mdf_cpu_usage.max")
        # oracle: recompute the aggregate by scanning pairs
        vals = [
            pool.read()[0]
            for inst_idx, _, _, pool in state.pairs
            if registry.instances[inst_idx].id == "mdf_cpu_usage"
        ]
        assert pooled[idx] == max(vals)

    def test_absent_metric_is_nan(self, entity_factory):
        registry = small_registry()
        entity = entity_factory({"cpu_usage": 1}, seed=4)
        pooled, _ = featurize_entity(registry, entity)
        schema = FeatureSchema.from_registry(registry)
        assert np.isnan(pooled[schema.names.index("mdf_threads.max")])
        assert not np.isnan(pooled[schema.names.index("mdf_cpu_usage.max")])

    def test_permutation_invariance_and_monotonicity(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            vals = rng.uniform(0, 5, size=int(rng.integers(1, 6)))
            full = max(vals)
            perm = rng.permutation(vals)
            assert max(perm) == full
            assert max(np.append(vals, rng.uniform(0, 5))) >= full


class TestImputation:
    def schema3(self):
        reg = default_registry()
        return FeatureSchema.from_registry(reg)

    def test_mean_of_present(self):
        schema = self.schema3()
        pooled = np.full((2, schema.pooled_dim), np.nan)
        pooled[0, 0] = 1.0
        pooled[1, 0] = 3.0
        pooled[:, 1:] = 0.5
        means = fit_imputation(pooled, schema)
        assert means[0] == 2.0
        assert np.all(means[1:] == 0.5)

    def test_all_absent_feature_named_in_error(self):
        schema = self.schema3()
        pooled = np.zeros((3, schema.pooled_dim))
        pooled[:, 5] = np.nan
        with pytest.raises(FeatureError, match=schema.names[5]):
            fit_imputation(pooled, schema)

    def test_masked_entries_excluded(self):
        schema = self.schema3()
        rng = np.random.default_rng(10)
        pooled = rng.uniform(0, 1, size=(6, schema.pooled_dim))
        mask = rng.random(pooled.shape) < 0.3
        pooled[mask] = np.nan
        pooled[0] = 1.0  # guarantee every column present somewhere
        means = fit_imputation(pooled, schema)
        for j in range(schema.pooled_dim):
            col = pooled[:, j]
            assert means[j] == pytest.approx(col[~np.isnan(col)].mean())


class TestAssemble:
    def test_dim_and_imputation(self, entity_factory):
        registry = small_registry()
        schema = FeatureSchema.from_registry(registry)
        full = entity_factory({m: 1 for m in DEFAULT_METRICS}, seed=1, ent_id="full")
        sparse = entity_factory({"cpu_usage": 1}, seed=2, ent_id="sparse")
        pooled, meta = featurize_entities(registry, [full, sparse])
        stats = fit_training_stats(
            np.vstack([pooled[0:1], pooled[0:1]]), np.vstack([meta, meta]), schema
        )
        for row, m in zip(pooled, meta):
            z = assemble(row, m, stats, schema)
            assert z.shape == (134,)
            assert np.all(np.isfinite(z))

    def test_full_coverage_needs_no_imputation(self, entity_factory):
        registry = small_registry()
        entity = entity_factory({m: 1 for m in DEFAULT_METRICS}, seed=5)
        pooled, _ = featurize_entity(registry, entity)
        assert not np.isnan(pooled).any()

    def test_imputed_count_matches_registry_scan(self, entity_factory):
        registry = small_registry()
        entity = entity_factory({m: 1 for m in DEFAULT_METRICS if m != "threads"}, seed=6)
        pooled, _ = featurize_entity(registry, entity)
        applicable = [i for i in registry.instances if "threads" in i.metrics]
        assert int(np.isnan(pooled).sum()) == 2 * len(applicable)

    def test_meta_standardized_by_training_stats(self):
        schema = FeatureSchema.from_registry(default_registry())
        stats = TrainingStats(
            pooled_means=np.zeros(schema.pooled_dim),
            meta_mean=np.full(8, 2.0),
            meta_std=np.full(8, 4.0),
        )
        z = assemble(np.zeros(schema.pooled_dim), np.full(8, 10.0), stats, schema)
        assert np.all(z[126:] == 2.0)


class TestIncrementalVsBatch:
    def test_snapshot_equals_full_replay_at_every_step(self, entity_factory):
        registry = default_registry().with_windows(subnn=5, forecast=4)
        entity = entity_factory({"cpu_usage": 2, "error_rate": 1, "heartbeat": 1}, seed=7, stream_len=9)
        by_key = entity.series_by_key()
        live = EntityFeatureState(registry, entity)
        for t in range(entity.stream_length):
            live.update({k: float(s.stream[t]) for k, s in by_key.items()})
            fresh = EntityFeatureState(registry, entity)
            for u in range(t + 1):
                fresh.update({k: float(s.stream[u]) for k, s in by_key.items()})
            np.testing.assert_array_equal(
                live.snapshot_pooled(), fresh.snapshot_pooled()
            )

    def test_pooled_max_nondecreasing_over_time(self, entity_factory):
        registry = default_registry().with_windows(subnn=5, forecast=4)
        entity = entity_factory({"cpu_usage": 1, "threads": 2}, seed=8, stream_len=12)
        by_key = entity.series_by_key()
        state = EntityFeatureState(registry, entity)
        prev = None
        n = len(registry.instances)
        for t in range(entity.stream_length):
            state.update({k: float(s.stream[t]) for k, s in by_key.items()})
            snap = state.snapshot_pooled()[:n]
            if prev is not None:
                present = ~np.isnan(snap)
                assert np.all(snap[present] >= np.where(np.isnan(prev), -np.inf, prev)[present])
            prev = snap

    def test_empty_stream_pools_read_zero(self, entity_factory):
        registry = small_registry()
        entity = entity_factory({"cpu_usage": 1}, seed=9, stream_len=0)
        pooled, _ = featurize_entity(registry, entity)
        present = ~np.isnan(pooled)
        assert np.all(pooled[present] == 0.0)


def test_csv_export_roundtrip(tmp_path, entity_factory):
    registry = small_registry()
    schema = FeatureSchema.from_registry(registry)
    entity = make_entity({m: 1 for m in DEFAULT_METRICS}, seed=11)
    pooled, meta = featurize_entities(registry, [entity])
    stats = fit_training_stats(pooled, meta, schema)
    z = assemble(pooled, meta, stats, schema)
    path = tmp_path / "features.csv"
    export_features_csv(path, z, schema, ids=[entity.id])
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    assert header[0] == "id" and tuple(header[1:]) == schema.names
    values = lines[1].split(",")
    assert values[0] == entity.id
    back = np.array([float(v) for v in values[1:]])
    np.testing.assert_array_equal(back, z[0])
