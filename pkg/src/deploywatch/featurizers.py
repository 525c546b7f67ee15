"""Per-series online scorers turning raw observations into anomaly degrees.

Five scorer kinds:

* stat_threshold  — threshold mu + alpha*sigma learned from history, fires 1
  after `run_len` consecutive values above it
* fixed_threshold — same run machine on a preset raw threshold
* missing_run     — fires 1 after `run_len` consecutive missing observations
* subseq_nn       — distance from the live window to its nearest neighbor
  among all history subsequences (standardized values)
* median_forecast — |observation - median-based forecast| on standardized
  values over a rolling window

Every state is updatable from (previous state, one observation) only, so
step-by-step replay and batch recomputation agree exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from deploywatch import kernels
from deploywatch.data import DEFAULT_METRICS

SIGMA_FLOOR = 1e-8

KIND_STAT = "stat_threshold"
KIND_FIXED = "fixed_threshold"
KIND_GAP = "missing_run"
KIND_SUBNN = "subseq_nn"
KIND_FORECAST = "median_forecast"

RULE_KINDS = frozenset({KIND_STAT, KIND_FIXED, KIND_GAP})
ALGO_KINDS = frozenset({KIND_SUBNN, KIND_FORECAST})
ALL_KINDS = RULE_KINDS | ALGO_KINDS


class FeaturizerError(ValueError):
    """Bad featurizer spec or an initialization that cannot proceed."""


@dataclass(frozen=True)
class FeaturizerSpec:
    """One registry entry: a scorer kind bound to the metrics it monitors."""

    id: str
    kind: str
    metrics: frozenset[str]
    alpha: float | None = None  # stat_threshold multiplier
    threshold: float | None = None  # fixed_threshold raw cut
    run_len: int | None = None  # consecutive steps for the rule kinds
    window: int | None = None  # subseq_nn / median_forecast window

    def __post_init__(self) -> None:
        if self.kind not in ALL_KINDS:
            raise FeaturizerError(f"unknown featurizer kind {self.kind!r}")
        if not self.metrics:
            raise FeaturizerError(f"{self.id}: empty metric applicability")
        if self.kind == KIND_STAT and (self.alpha is None or self.run_len is None or self.run_len < 1):
            raise FeaturizerError(f"{self.id}: stat_threshold needs alpha and run_len >= 1")
        if self.kind == KIND_FIXED and (self.threshold is None or self.run_len is None or self.run_len < 1):
            raise FeaturizerError(f"{self.id}: fixed_threshold needs threshold and run_len >= 1")
        if self.kind == KIND_GAP and (self.run_len is None or self.run_len < 1):
            raise FeaturizerError(f"{self.id}: missing_run needs run_len >= 1")
        if self.kind in ALGO_KINDS and (self.window is None or self.window < 1):
            raise FeaturizerError(f"{self.id}: {self.kind} needs window >= 1")

    @property
    def is_rule(self) -> bool:
        return self.kind in RULE_KINDS


@dataclass(frozen=True)
class Registry:
    """Ordered featurizer instances; the order fixes the feature schema."""

    instances: tuple[FeaturizerSpec, ...]
    catalog: tuple[str, ...] = DEFAULT_METRICS

    def __post_init__(self) -> None:
        ids = [i.id for i in self.instances]
        if len(set(ids)) != len(ids):
            raise FeaturizerError("duplicate instance ids in registry")
        unknown = {m for i in self.instances for m in i.metrics} - set(self.catalog)
        if unknown:
            raise FeaturizerError(f"registry references metrics outside the catalog: {sorted(unknown)}")

    def __len__(self) -> int:
        return len(self.instances)

    def without_kinds(self, kinds: set[str] | frozenset[str]) -> "Registry":
        return Registry(
            instances=tuple(i for i in self.instances if i.kind not in kinds),
            catalog=self.catalog,
        )

    def with_windows(self, *, subnn: int | None = None, forecast: int | None = None) -> "Registry":
        """Copy with algorithm window sizes overridden (rule instances untouched)."""
        out = []
        for inst in self.instances:
            if inst.kind == KIND_SUBNN and subnn is not None:
                inst = replace(inst, window=subnn)
            elif inst.kind == KIND_FORECAST and forecast is not None:
                inst = replace(inst, window=forecast)
            out.append(inst)
        return Registry(instances=tuple(out), catalog=self.catalog)


# Rule-instance defaults. The production rule set is proprietary; these are
# editable placeholders wired to the synthetic metric catalog. Each instance
# monitors exactly one metric.
_STAT_GRID: tuple[tuple[str, float, int], ...] = (
    ("cpu_usage", 2.0, 3),
    ("memory_usage", 2.0, 5),
    ("threads", 3.0, 3),
    ("load_average", 3.0, 5),
    ("queue_depth", 4.0, 3),
    ("heap_usage", 4.0, 5),
    ("latency_p50", 5.0, 3),
    ("request_rate", 5.0, 5),
    # three high-bar extras
    ("latency_p99", 6.0, 3),
    ("gc_time", 6.0, 3),
    ("open_connections", 6.0, 3),
)

_FIXED_RULES: tuple[tuple[str, str, float, int], ...] = (
    ("thr_error_rate_warn", "error_rate", 0.05, 5),
    ("thr_error_rate_crit", "error_rate", 0.25, 2),
    ("thr_fault_count_warn", "fault_count", 1.0, 3),
    ("thr_fault_count_crit", "fault_count", 5.0, 1),
    ("thr_timeout_count", "timeout_count", 1.0, 3),
    ("thr_retry_count", "retry_count", 10.0, 3),
    ("thr_latency_p99_slo", "latency_p99", 2000.0, 5),
)


def default_registry(
    catalog: tuple[str, ...] = DEFAULT_METRICS,
    *,
    subnn_window: int = 100,
    forecast_window: int = 100,
    gap_run_len: int = 5,
) -> Registry:
    """The shipped registry: 19 rule instances + 2 algorithm instances per metric."""
    instances: list[FeaturizerSpec] = []
    for metric, alpha, run_len in _STAT_GRID:
        instances.append(
            FeaturizerSpec(
                id=f"stat_{metric}_a{alpha:g}_w{run_len}",
                kind=KIND_STAT,
                metrics=frozenset({metric}),
                alpha=alpha,
                run_len=run_len,
            )
        )
    for inst_id, metric, threshold, run_len in _FIXED_RULES:
        instances.append(
            FeaturizerSpec(
                id=inst_id,
                kind=KIND_FIXED,
                metrics=frozenset({metric}),
                threshold=threshold,
                run_len=run_len,
            )
        )
    instances.append(
        FeaturizerSpec(
            id="gap_heartbeat",
            kind=KIND_GAP,
            metrics=frozenset({"heartbeat"}),
            run_len=gap_run_len,
        )
    )
    for metric in catalog:
        instances.append(
            FeaturizerSpec(
                id=f"snn_{metric}",
                kind=KIND_SUBNN,
                metrics=frozenset({metric}),
                window=subnn_window,
            )
        )
    for metric in catalog:
        instances.append(
            FeaturizerSpec(
                id=f"mdf_{metric}",
                kind=KIND_FORECAST,
                metrics=frozenset({metric}),
                window=forecast_window,
            )
        )
    return Registry(instances=tuple(instances), catalog=catalog)


def registry_to_doc(registry: Registry) -> dict:
    return {
        "catalog": list(registry.catalog),
        "instances": [
            {
                "id": i.id,
                "kind": i.kind,
                "metrics": sorted(i.metrics),
                **({"alpha": i.alpha} if i.alpha is not None else {}),
                **({"threshold": i.threshold} if i.threshold is not None else {}),
                **({"run_len": i.run_len} if i.run_len is not None else {}),
                **({"window": i.window} if i.window is not None else {}),
            }
            for i in registry.instances
        ],
    }


def registry_from_doc(doc: dict) -> Registry:
    try:
        catalog = tuple(str(m) for m in doc["catalog"])
        instances = tuple(
            FeaturizerSpec(
                id=str(e["id"]),
                kind=str(e["kind"]),
                metrics=frozenset(str(m) for m in e["metrics"]),
                alpha=e.get("alpha"),
                threshold=e.get("threshold"),
                run_len=e.get("run_len"),
                window=e.get("window"),
            )
            for e in doc["instances"]
        )
    except (KeyError, TypeError) as exc:
        raise FeaturizerError(f"malformed registry document: {exc}") from exc
    return Registry(instances=instances, catalog=catalog)


def save_registry(registry: Registry, path: str | Path) -> None:
    Path(path).write_text(
        yaml.safe_dump(registry_to_doc(registry), sort_keys=False), encoding="utf-8"
    )


def load_registry(path: str | Path) -> Registry:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    try:
        return registry_from_doc(doc)
    except FeaturizerError as exc:
        raise FeaturizerError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# history statistics and standardization


def history_stats(history: np.ndarray) -> tuple[float, float]:
    """(mean, population std) over the present values of a history window."""
    present = history[~np.isnan(history)]
    if present.size == 0:
        raise FeaturizerError("history has no present values; no statistics derivable")
    mu = float(present.mean())
    sigma = float(present.std())  # population convention, used everywhere
    return mu, sigma


def standardize(value: float, mu: float, sigma: float) -> float:
    return (value - mu) / max(sigma, SIGMA_FLOOR)


def _fill_gaps(values: np.ndarray) -> np.ndarray:
    """Carry-forward imputation; leading gaps backfilled from the first present value."""
    out = values.copy()
    mask = np.isnan(out)
    if not mask.any():
        return out
    if mask.all():
        raise FeaturizerError("history has no present values; no statistics derivable")
    idx = np.where(~mask, np.arange(out.size), 0)
    np.maximum.accumulate(idx, out=idx)
    out = out[idx]
    first = np.argmin(mask)  # first present position
    out[:first] = out[first]
    return out


# ---------------------------------------------------------------------------
# instance states


class ThresholdRunState:
    """Run-length machine shared by stat_threshold and fixed_threshold."""

    __slots__ = ("threshold", "run_len", "run")

    def __init__(self, threshold: float, run_len: int):
        self.threshold = threshold
        self.run_len = run_len
        self.run = 0

    def step(self, value: float) -> float:
        if math.isnan(value):
            self.run = 0  # a gap breaks the run
            return 0.0
        self.run = self.run + 1 if value > self.threshold else 0
        return 1.0 if self.run >= self.run_len else 0.0


class MissingRunState:
    """Counts consecutive missing observations."""

    __slots__ = ("run_len", "run")

    def __init__(self, run_len: int):
        self.run_len = run_len
        self.run = 0

    def step(self, value: float) -> float:
        self.run = self.run + 1 if math.isnan(value) else 0
        return 1.0 if self.run >= self.run_len else 0.0


class SubseqNNState:
    """Nearest-neighbor distance of the live window to history subsequences.

    The inference buffer starts empty and the score is 0 until `window`
    values have been pushed. Missing observations repeat the last buffered
    value; while nothing has ever been present the buffer stays empty.
    """

    __slots__ = ("subs", "mu", "sigma", "window", "buf", "filled")

    def __init__(self, history: np.ndarray, window: int):
        t = history.shape[0]
        if t < window:
            raise FeaturizerError(f"history length {t} shorter than window {window}")
        self.mu, self.sigma = history_stats(history)
        filled_hist = _fill_gaps(history)
        std_hist = (filled_hist - self.mu) / max(self.sigma, SIGMA_FLOOR)
        n_subs = t - window + 1
        subs = np.lib.stride_tricks.sliding_window_view(std_hist, window)
        self.subs = np.ascontiguousarray(subs, dtype=np.float64)
        assert self.subs.shape == (n_subs, window)
        self.window = window
        self.buf = np.zeros(window, dtype=np.float64)
        self.filled = 0

    def step(self, value: float) -> float:
        if math.isnan(value):
            if self.filled == 0:
                return 0.0  # nothing ever present: window stays undefined
            pushed = self.buf[min(self.filled, self.window) - 1]
        else:
            pushed = standardize(value, self.mu, self.sigma)
        if self.filled < self.window:
            self.buf[self.filled] = pushed
            self.filled += 1
        else:
            self.buf[:-1] = self.buf[1:]
            self.buf[-1] = pushed
        if self.filled < self.window:
            return 0.0
        return float(kernels.subseq_min_dist(self.subs, self.buf))


class MedianForecastState:
    """Median-based one-step forecast deviation on standardized values.

    The rolling buffer is seeded from the standardized history tail, so the
    score is live from the first post-launch step whenever T >= window.
    """

    __slots__ = ("mu", "sigma", "window", "buf", "filled")

    def __init__(self, history: np.ndarray, window: int):
        self.mu, self.sigma = history_stats(history)
        self.window = window
        self.buf = np.zeros(window, dtype=np.float64)
        filled_hist = _fill_gaps(history)
        std_hist = (filled_hist - self.mu) / max(self.sigma, SIGMA_FLOOR)
        seed = std_hist[-window:]
        self.filled = seed.shape[0]
        self.buf[: self.filled] = seed

    def step(self, value: float) -> float:
        if math.isnan(value):
            # carry the last value forward for the buffer, no score this step
            if self.filled > 0:
                self._push(self.buf[min(self.filled, self.window) - 1])
            return 0.0
        std = standardize(value, self.mu, self.sigma)
        if self.filled < self.window:
            self._push(std)
            return 0.0
        m_obs = float(np.median(self.buf))
        m_dif = float(np.median(np.diff(self.buf)))
        forecast = m_obs + (self.window / 2.0) * m_dif
        self._push(std)
        return abs(std - forecast)

    def _push(self, value: float) -> None:
        if self.filled < self.window:
            self.buf[self.filled] = value
            self.filled += 1
        else:
            self.buf[:-1] = self.buf[1:]
            self.buf[-1] = value


InstanceState = ThresholdRunState | MissingRunState | SubseqNNState | MedianForecastState


def init_state(spec: FeaturizerSpec, history: np.ndarray) -> InstanceState:
    """Initialize one scorer instance from a series history."""
    if spec.kind == KIND_STAT:
        mu, sigma = history_stats(history)
        return ThresholdRunState(threshold=mu + spec.alpha * sigma, run_len=spec.run_len)
    if spec.kind == KIND_FIXED:
        return ThresholdRunState(threshold=spec.threshold, run_len=spec.run_len)
    if spec.kind == KIND_GAP:
        return MissingRunState(run_len=spec.run_len)
    if spec.kind == KIND_SUBNN:
        return SubseqNNState(history, spec.window)
    if spec.kind == KIND_FORECAST:
        return MedianForecastState(history, spec.window)
    raise FeaturizerError(f"unknown featurizer kind {spec.kind!r}")


def score_stream(spec: FeaturizerSpec, history: np.ndarray, stream: np.ndarray) -> np.ndarray:
    """Replay a whole stream through a fresh instance (batch reference path)."""
    state = init_state(spec, history)
    out = np.empty(stream.shape[0], dtype=np.float64)
    for i, v in enumerate(stream):
        out[i] = state.step(float(v))
    return out


def extract_meta(meta: np.ndarray) -> np.ndarray:
    """Identity projection of the 8 meta features (scaling happens downstream)."""
    meta = np.asarray(meta, dtype=np.float64)
    if meta.shape != (8,):
        raise FeaturizerError(f"expected 8 meta features, got shape {meta.shape}")
    return meta
