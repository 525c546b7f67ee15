import numpy as np
import pytest

from deploywatch.data import DEFAULT_METRICS, SeriesKey
from deploywatch.stream import (
    DECISION_CONTINUE,
    DECISION_ROLLBACK,
    EntitySession,
    SessionConfig,
    SessionError,
    open_session,
    replay,
)
from conftest import SMALL_T_HISTORY, make_entity, synth_single


def quiet_entity(seed, stream_len=30, metrics=None, ent_id="quiet"):
    metrics = metrics or {m: 1 for m in DEFAULT_METRICS}
    return make_entity(
        metrics, t_history=SMALL_T_HISTORY, stream_len=stream_len, seed=seed, ent_id=ent_id
    )


class TestOpenSession:
    def test_full_coverage_state_counts(self, small_world):
        _, registry, model = small_world
        session = open_session(quiet_entity(1), model)
        assert session.n_instance_states == 63
        assert session.n_pooled_slots == 126

    def test_partial_coverage_counts(self, small_world):
        _, registry, model = small_world
        session = open_session(quiet_entity(2, metrics={"cpu_usage": 1}), model)
        applicable = [i for i in registry.instances if "cpu_usage" in i.metrics]
        assert session.n_instance_states == len(applicable)

    def test_multi_service_counts(self, small_world):
        _, registry, model = small_world
        session = open_session(quiet_entity(3, metrics={"cpu_usage": 2}), model)
        applicable = [i for i in registry.instances if "cpu_usage" in i.metrics]
        assert session.n_instance_states == 2 * len(applicable)

    def test_history_length_mismatch_rejected(self, small_world):
        _, _, model = small_world
        bad = make_entity({"cpu_usage": 1}, t_history=SMALL_T_HISTORY + 5, seed=4)
        with pytest.raises(SessionError, match="history length"):
            open_session(bad, model)

    def test_unknown_metric_skipped_with_warning(self, small_world, caplog):
        _, registry, model = small_world
        entity = quiet_entity(5, metrics={"cpu_usage": 1})
        weird = make_entity({"cpu_usage": 1}, t_history=SMALL_T_HISTORY, seed=5)
        # splice in a series with a metric no instance knows
        from deploywatch.data import Series

        rogue = Series(
            key=SeriesKey(service="svc0", metric="made_up_metric"),
            history=weird.series[0].history,
            stream=weird.series[0].stream,
        )
        from dataclasses import replace

        entity = replace(entity, series=entity.series + (rogue,))
        with caplog.at_level("WARNING"):
            session = open_session(entity, model)
        assert "made_up_metric" in caplog.text
        applicable = [i for i in registry.instances if "cpu_usage" in i.metrics]
        assert session.n_instance_states == len(applicable)


class TestStep:
    def test_out_of_order_rejected(self, small_world):
        _, _, model = small_world
        entity = quiet_entity(6)
        session = open_session(entity, model)
        keys = {s.key: 1.0 for s in entity.series}
        session.step(SMALL_T_HISTORY + 1, keys)
        with pytest.raises(SessionError, match="out-of-order"):
            session.step(SMALL_T_HISTORY + 3, keys)

    def test_unknown_series_key_rejected(self, small_world):
        _, _, model = small_world
        entity = quiet_entity(7, metrics={"cpu_usage": 1})
        session = open_session(entity, model)
        with pytest.raises(SessionError, match="unknown series"):
            session.step(
                SMALL_T_HISTORY + 1,
                {SeriesKey(service="svc9", metric="cpu_usage"): 1.0},
            )

    def test_quiescent_stream_never_rolls_back(self, small_world):
        _, _, model = small_world
        for seed in (211, 212, 213, 214, 215):
            entity, truth = synth_single(seed)
            assert not truth["injected"]
            reports = replay(entity, model)
            assert len(reports) == entity.stream_length
            assert all(r.decision == DECISION_CONTINUE for r in reports), f"seed {seed}"

    def test_level_shift_triggers_rollback_promptly(self, small_world):
        _, _, model = small_world
        entity, truth = synth_single(301, kind="level_shift")
        onset = truth["detail"]["onset"]
        reports = replay(entity, model)
        rollback_steps = [r.t for r in reports if r.decision == DECISION_ROLLBACK]
        assert rollback_steps, "sustained shift must roll back"
        # stat rules need their consecutive exceedances plus the patience window
        assert rollback_steps[0] >= SMALL_T_HISTORY + onset
        assert rollback_steps[0] <= SMALL_T_HISTORY + onset + 8

    def test_replay_determinism(self, small_world):
        _, _, model = small_world
        entity = quiet_entity(10, stream_len=25)
        r1 = replay(entity, model)
        r2 = replay(entity, model)
        assert [r.score for r in r1] == [r.score for r in r2]
        assert [r.top_features for r in r1] == [r.top_features for r in r2]

    def test_top_features_shape_and_order(self, small_world):
        _, _, model = small_world
        reports = replay(quiet_entity(11, stream_len=5), model, SessionConfig(top_k=4))
        names = set(model.schema.names)
        for report in reports:
            assert len(report.top_features) == 4
            values = [v for _, v in report.top_features]
            assert values == sorted(values, reverse=True)
            assert all(name in names for name, _ in report.top_features)

    def test_report_history_is_bounded(self, small_world):
        _, _, model = small_world
        entity = quiet_entity(12, stream_len=30)
        session = open_session(entity, model, SessionConfig(history_limit=7))
        by_key = entity.series_by_key()
        for i in range(entity.stream_length):
            session.step(
                SMALL_T_HISTORY + 1 + i,
                {k: float(s.stream[i]) for k, s in by_key.items()},
            )
        assert len(session.reports) == 7
        assert session.reports[-1].t == SMALL_T_HISTORY + 30

    def test_rollback_patience(self, small_world):
        _, _, model = small_world
        entity = quiet_entity(13, stream_len=10)
        config = SessionConfig(rollback_patience=3, threshold=0.0)
        # threshold 0 makes every step positive in mean mode; use mean model view
        from dataclasses import replace as dc_replace

        mean_model = dc_replace(model, mode="mean")
        session = open_session(entity, mean_model, config)
        by_key = entity.series_by_key()
        decisions = []
        for i in range(entity.stream_length):
            report = session.step(
                SMALL_T_HISTORY + 1 + i,
                {k: float(s.stream[i]) for k, s in by_key.items()},
            )
            decisions.append(report.decision)
        assert decisions[:2] == [DECISION_CONTINUE, DECISION_CONTINUE]
        assert all(d == DECISION_ROLLBACK for d in decisions[2:])

    def test_absent_series_treated_as_missing(self, small_world):
        _, _, model = small_world
        entity = quiet_entity(14, metrics={"cpu_usage": 1, "heartbeat": 1}, stream_len=12)
        session = open_session(entity, model)
        cpu_key = next(s.key for s in entity.series if s.key.metric == "cpu_usage")
        hb_idx = session.model.schema.names.index("gap_heartbeat.max")
        # never send heartbeat: its gap rule must eventually fire
        for i in range(8):
            session.step(SMALL_T_HISTORY + 1 + i, {cpu_key: 1.0})
        pooled = session.features.snapshot_pooled()
        assert pooled[hb_idx] == 1.0
