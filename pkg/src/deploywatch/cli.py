"""Command line interface.

Subcommands: synth, train, score, eval, serve, bench, info. The model
artifact path can come from --model or the DEPLOYWATCH_MODEL environment
variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from deploywatch import kernels
from deploywatch.bench import run_bench
from deploywatch.data import LabelingScheme, load_dataset
from deploywatch.evaluate import (
    ExperimentConfig,
    FeatureCache,
    ProtocolConfig,
    run_experiment,
)
from deploywatch.features import assemble, export_features_csv, featurize_entity
from deploywatch.featurizers import default_registry, load_registry, save_registry
from deploywatch.hybrid import (
    HybridConfig,
    TrainingData,
    load_artifact,
    save_artifact,
    train_hybrid,
)
from deploywatch.one_class import OneClassConfig
from deploywatch.service import SessionManager, make_http_server, serve_ndjson
from deploywatch.stream import SessionConfig
from deploywatch.synth import SynthConfig, benchmark_config, generate

log = logging.getLogger(__name__)


def _model_path(args) -> Path:
    path = args.model or os.environ.get("DEPLOYWATCH_MODEL")
    if not path:
        raise SystemExit("no model artifact: pass --model or set DEPLOYWATCH_MODEL")
    return Path(path)


def _registry_for(args, metrics):
    if getattr(args, "registry", None):
        return load_registry(args.registry)
    return default_registry(tuple(metrics))


def cmd_synth(args) -> int:
    if args.preset == "benchmark":
        cfg = benchmark_config(seed=args.seed, n_entities=args.entities)
    else:
        cfg = SynthConfig(
            n_entities=args.entities,
            anomaly_rate=args.anomaly_rate,
            unlabeled_frac=args.unlabeled_frac,
            t_history=args.t_history,
            stream_mean=args.stream_mean,
            seed=args.seed,
        )
    result = generate(cfg)
    result.write(args.out)
    if args.truth_out:
        Path(args.truth_out).write_text(json.dumps(result.truth, indent=1), encoding="utf-8")
    n_inj = sum(1 for t in result.truth.values() if t["injected"])
    print(f"wrote {len(result.entities)} entities ({n_inj} injected) to {args.out}")
    return 0


def _two_way_split(labels: np.ndarray, val_frac: float, seed: int):
    n = labels.shape[0]
    for attempt in range(50):
        rng = np.random.default_rng(seed + attempt)
        order = rng.permutation(n)
        n_val = max(1, int(round(val_frac * n)))
        val_idx, train_idx = order[:n_val], order[n_val:]
        if all(
            p.size and labels[p].min() != labels[p].max() for p in (train_idx, val_idx)
        ):
            return train_idx, val_idx
    raise SystemExit("could not draw a train/val split with both classes on each side")


def cmd_train(args) -> int:
    dataset = load_dataset(args.data, LabelingScheme(args.scheme))
    registry = _registry_for(args, dataset.metrics)
    cache = FeatureCache.build(dataset, registry)
    train_idx, val_idx = _two_way_split(cache.labels, args.val_frac, args.seed)
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
    oc = OneClassConfig(max_epochs=args.epochs) if args.epochs else OneClassConfig()
    delta_grid = tuple(float(x) for x in args.delta_grid.split(",")) if args.delta_grid else None
    cfg = HybridConfig(
        n_one_class=args.oc_members,
        n_gbdt=args.gb_members,
        mode=args.mode,
        seed=args.seed,
        one_class=oc,
        delta_grid=delta_grid,
    )
    model = train_hybrid(data, registry, cfg, t_history=dataset.t_history)
    save_artifact(model, args.out)
    if args.features_csv:
        x = model.assemble(cache.pooled_labeled, cache.meta_labeled)
        export_features_csv(args.features_csv, x, model.schema, ids=cache.labeled_ids)
    if args.registry_out:
        save_registry(registry, args.registry_out)
    print(model.summary())
    print(f"artifact written to {args.out}")
    return 0


def cmd_score(args) -> int:
    model = load_artifact(_model_path(args))
    dataset = load_dataset(args.data, LabelingScheme(args.scheme))
    rows = []
    for entity in dataset.labeled + dataset.unlabeled:
        pooled, meta = featurize_entity(model.registry, entity)
        z = model.assemble(pooled, meta)
        score = float(model.score(z)[0])
        decision = int(model.decide(z)[0])
        rows.append((entity.id, score, decision, entity.stream_length))
    out = Path(args.out) if args.out else None
    lines = ["id,score,decision,steps"]
    lines += [f"{i},{s!r},{d},{n}" for i, s, d, n in rows]
    text = "\n".join(lines) + "\n"
    if out:
        out.write_text(text, encoding="utf-8")
        print(f"scored {len(rows)} entities -> {out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    dataset = load_dataset(args.data, LabelingScheme(args.scheme))
    registry = _registry_for(args, dataset.metrics)
    hybrid = HybridConfig(seed=args.seed)
    if args.quick:
        hybrid = replace(
            hybrid,
            n_one_class=1,
            n_gbdt=1,
            one_class=OneClassConfig(max_epochs=40, patience=5),
        )
    cfg = ExperimentConfig(
        protocol=ProtocolConfig(n_splits=args.splits, split_seed=args.seed),
        hybrid=hybrid,
        include_dsvdd=not args.no_dsvdd,
    )
    report = run_experiment(dataset, cfg, registry)
    print(report.to_table())
    print(f"total {report.runtime_s:.1f}s (featurize {report.featurize_s:.1f}s)")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_json(), indent=1), encoding="utf-8")
        print(f"report written to {args.out}")
    return 0


def cmd_serve(args) -> int:
    model = load_artifact(_model_path(args))
    session_cfg = SessionConfig(
        rollback_patience=args.patience,
        threshold=args.threshold,
    )
    manager = SessionManager(model, session_cfg)
    if args.transport == "stdio":
        serve_ndjson(manager, sys.stdin, sys.stdout)
        return 0
    server = make_http_server(manager, host=args.host, port=args.port)
    log.info("serving on http://%s:%d", args.host, args.port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_bench(args) -> int:
    offsets = tuple(int(x) for x in args.offsets.split(","))
    report = run_bench(t_history=args.t_history, offsets=offsets, quick=args.quick, seed=args.seed)
    session = report["session"]
    print(f"active kernel backend: {kernels.BACKEND}")
    for name, timing in report["kernel"]["backends"].items():
        print(f"  scan[{name}]: near {timing['near']:.1f}us  far {timing['far']:.1f}us")
    for off in session["offsets"]:
        print(f"  step median @ offset {off}: {session['median_ms'][str(off)]:.3f} ms")
    print(f"  ratio (far/near offset): {session['ratio']:.2f}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1), encoding="utf-8")
    return 0


def cmd_info(args) -> int:
    model = load_artifact(_model_path(args))
    print(model.summary())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deploywatch")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--entities", type=int, default=200)
    p.add_argument("--anomaly-rate", type=float, default=0.1)
    p.add_argument("--unlabeled-frac", type=float, default=0.0)
    p.add_argument("--t-history", type=int, default=288)
    p.add_argument("--stream-mean", type=float, default=16.0)
    p.add_argument("--preset", choices=["basic", "benchmark"], default="basic")
    p.add_argument("--truth-out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a hybrid model artifact")
    p.add_argument("--data", required=True)
    p.add_argument("--scheme", choices=[s.value for s in LabelingScheme], default="hard")
    p.add_argument("--out", required=True)
    p.add_argument("--registry", help="registry YAML (default: built-in)")
    p.add_argument("--registry-out", help="also write the effective registry YAML")
    p.add_argument("--mode", choices=["mean", "sequential"], default="sequential")
    p.add_argument("--oc-members", type=int, default=3)
    p.add_argument("--gb-members", type=int, default=3)
    p.add_argument("--val-frac", type=float, default=0.25)
    p.add_argument("--epochs", type=int, help="cap one-class training epochs")
    p.add_argument("--delta-grid", help="comma list, e.g. 1,10,100")
    p.add_argument("--features-csv", help="dump the assembled labeled feature matrix")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="batch-score a dataset file")
    p.add_argument("--model")
    p.add_argument("--data", required=True)
    p.add_argument("--scheme", choices=[s.value for s in LabelingScheme], default="hard")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="run the split protocol over all variants")
    p.add_argument("--data", required=True)
    p.add_argument("--scheme", choices=[s.value for s in LabelingScheme], default="hard")
    p.add_argument("--registry")
    p.add_argument("--splits", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true")
    p.add_argument("--no-dsvdd", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve sessions over stdio or HTTP")
    p.add_argument("--model")
    p.add_argument("--transport", choices=["stdio", "http"], default="stdio")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--patience", type=int, default=1)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", help="kernel and session latency benchmark")
    p.add_argument("--t-history", type=int, default=2880)
    p.add_argument("--offsets", default="100,10000")
    p.add_argument("--quick", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("info", help="print a model artifact summary")
    p.add_argument("--model")
    p.set_defaults(func=cmd_info)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
