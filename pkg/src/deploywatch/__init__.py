"""deploywatch: online entity-level anomaly detection for deployment
rollback monitoring."""

from deploywatch.data import (
    DEFAULT_METRICS,
    Dataset,
    EntityRecord,
    LabelingScheme,
    Series,
    SeriesKey,
    binarize,
    load_dataset,
    save_dataset,
)
from deploywatch.featurizers import Registry, default_registry, load_registry, save_registry
from deploywatch.features import FeatureSchema, featurize_entity
from deploywatch.hybrid import HybridConfig, HybridModel, load_artifact, save_artifact, train_hybrid
from deploywatch.stream import EntitySession, SessionConfig, open_session, replay
from deploywatch.synth import SynthConfig, benchmark_config, generate

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_METRICS",
    "Dataset",
    "EntityRecord",
    "EntitySession",
    "FeatureSchema",
    "HybridConfig",
    "HybridModel",
    "LabelingScheme",
    "Registry",
    "SeriesKey",
    "Series",
    "SessionConfig",
    "SynthConfig",
    "__version__",
    "benchmark_config",
    "binarize",
    "default_registry",
    "featurize_entity",
    "generate",
    "load_artifact",
    "load_dataset",
    "load_registry",
    "open_session",
    "replay",
    "save_artifact",
    "save_dataset",
    "save_registry",
    "train_hybrid",
]
