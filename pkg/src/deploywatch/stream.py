"""Online per-entity inference sessions.

A session is opened from an entity's pre-launch history, consumes one
observation vector per step, maintains featurizer and pooling state
incrementally, scores the assembled vector with the hybrid model and
applies the rollback rule (decision positive for `patience` consecutive
steps). Sessions are replayable: state is a pure function of the history
and the stream prefix.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from deploywatch.data import EntityRecord, SeriesKey
from deploywatch.features import EntityFeatureState
from deploywatch.hybrid import HybridModel

log = logging.getLogger(__name__)

DECISION_CONTINUE = "continue"
DECISION_ROLLBACK = "rollback"


class SessionError(ValueError):
    """Session opening or stepping violated a precondition."""


@dataclass
class SessionConfig:
    rollback_patience: int = 1  # consecutive positive steps before rollback
    top_k: int = 5
    history_limit: int = 10000  # retained reports; keeps memory bounded
    threshold: float | None = None  # override the artifact decision threshold


@dataclass(frozen=True)
class ScoreReport:
    t: int
    score: float
    decision: str
    top_features: tuple[tuple[str, float], ...]

    def to_json(self) -> dict:
        return {
            "t": self.t,
            "score": self.score,
            "decision": self.decision,
            "top_features": [[name, value] for name, value in self.top_features],
        }


class EntitySession:
    """One live deployment being scored step by step."""

    def __init__(self, entity: EntityRecord, model: HybridModel, config: SessionConfig | None = None):
        self.config = config or SessionConfig()
        if model.t_history is not None and entity.t_history != model.t_history:
            raise SessionError(
                f"entity history length {entity.t_history} does not match "
                f"model expectation {model.t_history}"
            )
        known = {m for inst in model.registry.instances for m in inst.metrics}
        for s in entity.series:
            if s.key.metric not in known:
                log.warning(
                    "entity %s: metric %r matches no featurizer instance; series skipped",
                    entity.id,
                    s.key.metric,
                )
        self.entity = entity
        self.model = model
        self.features = EntityFeatureState(model.registry, entity)
        self.keys = frozenset(s.key for s in entity.series)
        self.t = entity.t_history
        self._consecutive = 0
        self._rolled_back = False
        self.reports: deque[ScoreReport] = deque(maxlen=self.config.history_limit)
        # pooled-feature attribution weights: mean split gain across members
        gain = np.mean([m.importance() for m in model.gb_members], axis=0)
        self._pooled_gain = gain[: model.schema.pooled_dim]

    @property
    def n_instance_states(self) -> int:
        return self.features.n_instance_states

    @property
    def n_pooled_slots(self) -> int:
        return self.features.n_pooled_slots

    @property
    def rolled_back(self) -> bool:
        return self._rolled_back

    def step(self, t: int, values: dict[SeriesKey, float | None]) -> ScoreReport:
        """Consume the observation vector for time step t (= current t + 1)."""
        if t != self.t + 1:
            raise SessionError(f"out-of-order step: expected t={self.t + 1}, got t={t}")
        unknown = set(values) - self.keys
        if unknown:
            raise SessionError(f"unknown series keys in step: {sorted(str(k) for k in unknown)}")
        clean = {
            k: (math.nan if v is None else float(v))
            for k, v in values.items()
        }
        self.features.update(clean)
        self.t = t

        pooled = self.features.snapshot_pooled()
        z = self.model.assemble(pooled, self.features.meta)
        score = float(self.model.score(z)[0])
        positive = bool(self.model.decide(z[None, :], self.config.threshold)[0])
        self._consecutive = self._consecutive + 1 if positive else 0
        if self._consecutive >= self.config.rollback_patience:
            self._rolled_back = True
        decision = DECISION_ROLLBACK if self._rolled_back else DECISION_CONTINUE

        report = ScoreReport(
            t=t,
            score=score,
            decision=decision,
            top_features=self._top_features(z),
        )
        self.reports.append(report)
        return report

    def _top_features(self, z: np.ndarray) -> tuple[tuple[str, float], ...]:
        pooled_dim = self.model.schema.pooled_dim
        contrib = z[:pooled_dim] * self._pooled_gain
        order = np.argsort(contrib)[::-1][: self.config.top_k]
        names = self.model.schema.names
        return tuple((names[i], float(contrib[i])) for i in order)


def open_session(
    entity: EntityRecord, model: HybridModel, config: SessionConfig | None = None
) -> EntitySession:
    """Initialize all applicable featurizer instances from the entity history."""
    return EntitySession(entity, model, config)


def replay(
    entity: EntityRecord, model: HybridModel, config: SessionConfig | None = None
) -> list[ScoreReport]:
    """Run the entity's recorded stream through a fresh session."""
    session = open_session(entity, model, config)
    by_key = entity.series_by_key()
    out = []
    for i in range(entity.stream_length):
        t = entity.t_history + 1 + i
        values = {key: float(s.stream[i]) for key, s in by_key.items()}
        out.append(session.step(t, values))
    return out
