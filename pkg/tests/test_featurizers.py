import math

import numpy as np
import pytest

from deploywatch.featurizers import (
    ALGO_KINDS,
    KIND_FIXED,
    KIND_FORECAST,
    KIND_GAP,
    KIND_STAT,
    KIND_SUBNN,
    FeaturizerError,
    FeaturizerSpec,
    MedianForecastState,
    Registry,
    SubseqNNState,
    default_registry,
    extract_meta,
    history_stats,
    init_state,
    load_registry,
    save_registry,
    score_stream,
)


def spec_for(kind, **over):
    base = {
        KIND_STAT: dict(alpha=2.0, run_len=2),
        KIND_FIXED: dict(threshold=0.5, run_len=2),
        KIND_GAP: dict(run_len=2),
        KIND_SUBNN: dict(window=5),
        KIND_FORECAST: dict(window=5),
    }[kind]
    base.update(over)
    return FeaturizerSpec(id=f"test_{kind}", kind=kind, metrics=frozenset({"cpu_usage"}), **base)


class TestStatInit:
    def test_threshold_formula(self):
        # mu=0, sigma=1 -> tau = 3
        history = np.array([-1.0, 1.0, -1.0, 1.0])
        state = init_state(spec_for(KIND_STAT, alpha=3.0), history)
        assert state.threshold == pytest.approx(3.0)

    def test_constant_history_sigma_zero(self):
        state = init_state(spec_for(KIND_STAT, alpha=2.0), np.full(6, 5.0))
        assert state.threshold == pytest.approx(5.0)

    def test_hand_arithmetic(self):
        # mean 2.5, population std sqrt(1.25)
        history = np.array([1.0, 2.0, 3.0, 4.0])
        mu, sigma = history_stats(history)
        assert mu == pytest.approx(2.5)
        assert sigma == pytest.approx(math.sqrt(1.25))
        state = init_state(spec_for(KIND_STAT, alpha=1.0), history)
        assert state.threshold == pytest.approx(2.5 + math.sqrt(1.25))

    def test_missing_skipped_in_stats(self):
        mu, sigma = history_stats(np.array([1.0, np.nan, 3.0]))
        assert mu == pytest.approx(2.0)
        assert sigma == pytest.approx(1.0)

    def test_all_missing_errors(self):
        with pytest.raises(FeaturizerError, match="no statistics"):
            init_state(spec_for(KIND_STAT), np.full(4, np.nan))


class TestRuleStep:
    def test_run_length_gate(self):
        history = np.array([-1.0, 1.0, -1.0, 1.0])  # tau = 3 at alpha=3
        spec = spec_for(KIND_STAT, alpha=3.0, run_len=2)
        out = score_stream(spec, history, np.array([4.0, 4.0]))
        assert out.tolist() == [0.0, 1.0]

    def test_missing_breaks_run(self):
        history = np.array([-1.0, 1.0, -1.0, 1.0])
        spec = spec_for(KIND_STAT, alpha=3.0, run_len=2)
        out = score_stream(spec, history, np.array([4.0, np.nan, 4.0]))
        assert out.tolist() == [0.0, 0.0, 0.0]

    def test_fixed_threshold_uses_raw_values(self):
        spec = spec_for(KIND_FIXED, threshold=10.0, run_len=1)
        out = score_stream(spec, np.array([0.0, 0.0]), np.array([9.0, 11.0]))
        assert out.tolist() == [0.0, 1.0]

    def test_gap_run(self):
        spec = spec_for(KIND_GAP, run_len=2)
        out = score_stream(spec, np.array([1.0, 1.0]), np.array([np.nan, np.nan]))
        assert out.tolist() == [0.0, 1.0]

    def test_present_resets_gap(self):
        spec = spec_for(KIND_GAP, run_len=2)
        out = score_stream(spec, np.array([1.0, 1.0]), np.array([np.nan, 1.0, np.nan, np.nan]))
        assert out.tolist() == [0.0, 0.0, 0.0, 1.0]

    def test_exactly_at_threshold_does_not_fire(self):
        spec = spec_for(KIND_FIXED, threshold=5.0, run_len=1)
        out = score_stream(spec, np.array([0.0, 0.0]), np.array([5.0]))
        assert out.tolist() == [0.0]


class TestSubseqNN:
    def test_subsequence_counts(self):
        state = init_state(spec_for(KIND_SUBNN, window=3), np.arange(5.0))
        assert state.subs.shape == (3, 3)

    def test_production_scale_counts(self):
        rng = np.random.default_rng(0)
        state = init_state(spec_for(KIND_SUBNN, window=100), rng.standard_normal(2880))
        assert state.subs.shape == (2781, 100)

    def test_history_shorter_than_window_errors(self):
        with pytest.raises(FeaturizerError, match="shorter"):
            init_state(spec_for(KIND_SUBNN, window=6), np.arange(5.0))

    def test_constant_history_subsequences_identical(self):
        state = init_state(spec_for(KIND_SUBNN, window=3), np.full(6, 7.0))
        assert np.all(state.subs == state.subs[0])

    def test_three_four_five(self):
        state = init_state(spec_for(KIND_SUBNN, window=2), np.array([-1.0, 1.0]))
        state.subs = np.zeros((1, 2))
        state.mu, state.sigma = 0.0, 1.0
        assert state.step(3.0) == 0.0  # warm-up
        assert state.step(4.0) == 5.0

    def test_window_matching_history_scores_zero(self):
        rng = np.random.default_rng(5)
        history = rng.standard_normal(20)
        state = init_state(spec_for(KIND_SUBNN, window=4), history)
        mu, sigma = history_stats(history)
        # replay a raw history segment: standardized window equals a subsequence
        for v in history[6:10]:
            s = state.step(float(v))
        assert s == 0.0

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            t = int(rng.integers(8, 40))
            w = int(rng.integers(2, 6))
            history = rng.standard_normal(t) * rng.uniform(0.5, 4) + rng.uniform(-3, 3)
            stream = rng.standard_normal(w + 3) * rng.uniform(0.5, 4)
            spec = spec_for(KIND_SUBNN, window=w)
            scores = score_stream(spec, history, stream)
            mu, sigma = history_stats(history)
            std_hist = (history - mu) / max(sigma, 1e-8)
            std_stream = (stream - mu) / max(sigma, 1e-8)
            subs = np.lib.stride_tricks.sliding_window_view(std_hist, w)
            for i in range(w - 1, stream.shape[0]):
                window = std_stream[i - w + 1 : i + 1]
                expected = float(np.min(np.linalg.norm(subs - window, axis=1)))
                assert scores[i] == pytest.approx(expected, abs=1e-9)
            assert np.all(scores[: w - 1] == 0.0)

    def test_affine_invariance(self):
        rng = np.random.default_rng(7)
        history = rng.standard_normal(30)
        stream = rng.standard_normal(8)
        spec = spec_for(KIND_SUBNN, window=4)
        base = score_stream(spec, history, stream)
        scaled = score_stream(spec, 3.5 * history + 11.0, 3.5 * stream + 11.0)
        np.testing.assert_allclose(scaled, base, rtol=1e-9, atol=1e-12)

    def test_missing_uses_last_buffered_value(self):
        spec = spec_for(KIND_SUBNN, window=2)
        history = np.array([-1.0, 1.0, -1.0, 1.0])
        state = init_state(spec, history)
        state.step(1.0)
        s_missing = state.step(math.nan)
        # buffer should now hold the standardized 1.0 twice
        assert state.buf.tolist() == [1.0, 1.0]
        assert s_missing >= 0.0

    def test_all_missing_stream_scores_zero(self):
        spec = spec_for(KIND_SUBNN, window=2)
        out = score_stream(spec, np.array([-1.0, 1.0]), np.array([np.nan, np.nan, np.nan]))
        assert out.tolist() == [0.0, 0.0, 0.0]


class TestMedianForecast:
    def make_state(self, buf):
        state = MedianForecastState(np.array([-1.0, 1.0, -1.0, 1.0]), window=len(buf))
        state.mu, state.sigma = 0.0, 1.0
        state.buf = np.asarray(buf, dtype=np.float64)
        state.filled = len(buf)
        return state

    def test_hand_oracle(self):
        # m_obs=2.5, m_dif=1, forecast 2.5 + 2*1 = 4.5
        state = self.make_state([1.0, 2.0, 3.0, 4.0])
        assert state.step(5.0) == pytest.approx(0.5)
        assert state.buf.tolist() == [2.0, 3.0, 4.0, 5.0]

    def test_exact_forecast_scores_zero(self):
        state = self.make_state([1.0, 2.0, 3.0, 4.0])
        assert state.step(4.5) == pytest.approx(0.0)

    def test_constant_buffer_equal_obs(self):
        spec = spec_for(KIND_FORECAST, window=4)
        out = score_stream(spec, np.full(8, 5.0), np.array([5.0, 5.0]))
        assert out.tolist() == [0.0, 0.0]

    def test_seeded_from_history_tail(self):
        # T >= window: the first stream step is already scored
        rng = np.random.default_rng(8)
        history = rng.standard_normal(12)
        state = init_state(spec_for(KIND_FORECAST, window=4), history)
        assert state.filled == 4
        assert state.step(100.0) > 10.0

    def test_warm_up_when_history_shorter_than_window(self):
        state = init_state(spec_for(KIND_FORECAST, window=6), np.array([-1.0, 1.0]))
        assert state.filled == 2
        assert state.step(3.0) == 0.0  # still warming up

    def test_missing_scores_zero_and_carries_forward(self):
        state = self.make_state([1.0, 2.0, 3.0, 4.0])
        assert state.step(math.nan) == 0.0
        assert state.buf.tolist() == [2.0, 3.0, 4.0, 4.0]


class TestOnlineEquivalence:
    def random_pair(self, rng, kind):
        t = int(rng.integers(10, 40))
        history = rng.standard_normal(t) * rng.uniform(0.5, 3) + rng.uniform(-2, 2)
        n = int(rng.integers(1, 25))
        stream = rng.standard_normal(n) * rng.uniform(0.5, 3) + rng.uniform(-2, 2)
        for arr in (history, stream):
            arr[rng.random(arr.shape[0]) < 0.15] = np.nan
        if np.all(np.isnan(history)):
            history[0] = 0.0
        return history, stream

    @pytest.mark.parametrize(
        "kind", [KIND_STAT, KIND_FIXED, KIND_GAP, KIND_SUBNN, KIND_FORECAST]
    )
    def test_stepwise_equals_recompute_from_scratch(self, kind):
        rng = np.random.default_rng(hash(kind) % 2**32)
        spec = spec_for(kind)
        for _ in range(8):
            history, stream = self.random_pair(rng, kind)
            online = score_stream(spec, history, stream)
            for t in range(1, stream.shape[0] + 1):
                scratch = score_stream(spec, history, stream[:t])
                assert scratch[-1] == online[t - 1]

    @pytest.mark.parametrize("kind", sorted(ALGO_KINDS))
    def test_scores_nonnegative_finite(self, kind):
        rng = np.random.default_rng(11)
        spec = spec_for(kind)
        history, stream = self.random_pair(rng, kind)
        scores = score_stream(spec, history, stream)
        assert np.all(scores >= 0.0) and np.all(np.isfinite(scores))


class TestRegistry:
    def test_default_counts(self):
        reg = default_registry()
        assert len(reg) == 63
        rules = [i for i in reg.instances if i.is_rule]
        assert len(rules) == 19
        assert len([i for i in rules if i.kind == KIND_STAT]) == 11
        assert len([i for i in rules if i.kind == KIND_FIXED]) == 7
        assert len([i for i in rules if i.kind == KIND_GAP]) == 1
        assert len([i for i in reg.instances if i.kind in ALGO_KINDS]) == 44

    def test_ids_unique_and_stable(self):
        a = default_registry()
        b = default_registry()
        assert [i.id for i in a.instances] == [i.id for i in b.instances]

    def test_without_kinds(self):
        reg = default_registry().without_kinds({KIND_STAT, KIND_FIXED, KIND_GAP})
        assert len(reg) == 44
        assert all(not i.is_rule for i in reg.instances)

    def test_yaml_roundtrip(self, tmp_path):
        reg = default_registry()
        path = tmp_path / "registry.yaml"
        save_registry(reg, path)
        back = load_registry(path)
        assert back == reg

    def test_window_override(self):
        reg = default_registry().with_windows(subnn=12, forecast=9)
        subnn = [i for i in reg.instances if i.kind == KIND_SUBNN]
        fc = [i for i in reg.instances if i.kind == KIND_FORECAST]
        assert all(i.window == 12 for i in subnn)
        assert all(i.window == 9 for i in fc)

    def test_unknown_metric_rejected(self):
        with pytest.raises(FeaturizerError, match="outside the catalog"):
            Registry(
                instances=(
                    FeaturizerSpec(
                        id="x", kind=KIND_GAP, metrics=frozenset({"not_a_metric"}), run_len=2
                    ),
                ),
                catalog=("cpu_usage",),
            )


class TestExtractMeta:
    def test_identity(self):
        meta = np.arange(1.0, 9.0)
        np.testing.assert_array_equal(extract_meta(meta), meta)

    def test_wrong_arity(self):
        with pytest.raises(FeaturizerError, match="8 meta"):
            extract_meta(np.arange(7.0))

    def test_extreme_values_pass_through(self):
        meta = np.array([1e12, -1e12, 0, 1, 2, 3, 4, 5.0])
        np.testing.assert_array_equal(extract_meta(meta), meta)
