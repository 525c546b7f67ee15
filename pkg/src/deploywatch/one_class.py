"""Deep one-class detector over entity feature vectors.

A two-layer encoder (affine, layer norm, leaky rectifier; affine, layer
norm, sigmoid) maps features into (0,1)^embed. Training pulls normal
embeddings toward a fixed center under the soft Hamming distance; in
"semi" mode each query is paired with a sampled labeled anomaly and a
hinge pushes that pair at least `delta` apart. Scores are center distances
normalized by the maximal normal radius and clipped into [0, 1].

Everything is plain numpy with hand-written gradients so they can be
checked against finite differences.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from deploywatch.metrics import best_f1

LN_EPS = 1e-5
LEAK = 0.1
PARAM_KEYS = ("w1", "b1", "g1", "o1", "w2", "b2", "g2", "o2")
DECAY_KEYS = ("w1", "b1", "w2", "b2")  # layer-norm gain/offset carry no penalty

MODE_SEMI = "semi"
MODE_DSVDD = "dsvdd"


class OneClassError(ValueError):
    """Configuration or artifact violation in the one-class detector."""


Params = dict[str, np.ndarray]


@dataclass
class OneClassConfig:
    hidden: int = 128
    embed: int = 128
    delta: float = 100.0
    weight_decay: float = 1e-4
    batch_size: int = 256
    learning_rate: float = 1e-3
    max_epochs: int = 500
    patience: int = 20
    mode: str = MODE_SEMI
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in (MODE_SEMI, MODE_DSVDD):
            raise OneClassError(f"unknown mode {self.mode!r}")
        if self.delta <= 0:
            raise OneClassError("margin delta must be > 0")
        if self.weight_decay < 0:
            raise OneClassError("weight decay must be >= 0")


@dataclass
class OneClassModel:
    params: Params
    center: np.ndarray
    radius: float
    mode: str
    delta: float
    weight_decay: float


@dataclass
class TrainHistory:
    losses: list[float] = field(default_factory=list)
    train_center_dist: list[float] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    best_epoch: int = 0


def init_params(d: int, hidden: int, embed: int, rng: np.random.Generator) -> Params:
    return {
        "w1": rng.normal(0.0, np.sqrt(2.0 / d), size=(d, hidden)),
        "b1": np.zeros(hidden),
        "g1": np.ones(hidden),
        "o1": np.zeros(hidden),
        "w2": rng.normal(0.0, np.sqrt(1.0 / hidden), size=(hidden, embed)),
        "b2": np.zeros(embed),
        "g2": np.ones(embed),
        "o2": np.zeros(embed),
    }


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _ln_forward(a: np.ndarray, g: np.ndarray, o: np.ndarray):
    m = a.mean(axis=1, keepdims=True)
    d = a - m
    v = (d * d).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(v + LN_EPS)
    xhat = d * inv
    return g * xhat + o, (d, inv, xhat)


def _ln_backward(dy: np.ndarray, g: np.ndarray, cache):
    d, inv, xhat = cache
    h = d.shape[1]
    dxhat = dy * g
    dv = (dxhat * d).sum(axis=1, keepdims=True) * (-0.5) * inv**3
    dm = -dxhat.sum(axis=1, keepdims=True) * inv + dv * (-2.0) * d.mean(axis=1, keepdims=True)
    da = dxhat * inv + dv * (2.0 / h) * d + dm / h
    dg = (dy * xhat).sum(axis=0)
    do = dy.sum(axis=0)
    return da, dg, do


def _forward(params: Params, z: np.ndarray):
    a1 = z @ params["w1"] + params["b1"]
    n1, ln1 = _ln_forward(a1, params["g1"], params["o1"])
    h1 = np.where(n1 > 0, n1, LEAK * n1)
    a2 = h1 @ params["w2"] + params["b2"]
    n2, ln2 = _ln_forward(a2, params["g2"], params["o2"])
    e = _sigmoid(n2)
    return e, (z, ln1, n1, h1, ln2, e)


def _backward(params: Params, cache, de: np.ndarray) -> Params:
    z, ln1, n1, h1, ln2, e = cache
    dn2 = de * e * (1.0 - e)
    da2, dg2, do2 = _ln_backward(dn2, params["g2"], ln2)
    dw2 = h1.T @ da2
    db2 = da2.sum(axis=0)
    dh1 = da2 @ params["w2"].T
    dn1 = dh1 * np.where(n1 > 0, 1.0, LEAK)
    da1, dg1, do1 = _ln_backward(dn1, params["g1"], ln1)
    dw1 = z.T @ da1
    db1 = da1.sum(axis=0)
    return {"w1": dw1, "b1": db1, "g1": dg1, "o1": do1, "w2": dw2, "b2": db2, "g2": dg2, "o2": do2}


def encode(params: Params, z: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; accepts one vector or a matrix."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    if z.shape[1] != params["w1"].shape[0]:
        raise OneClassError(
            f"input dim {z.shape[1]} does not match encoder dim {params['w1'].shape[0]}"
        )
    e, _ = _forward(params, z)
    return e[0] if single else e


def soft_hamming(a: np.ndarray, b: np.ndarray) -> float | np.ndarray:
    """Sum of coordinatewise absolute differences (rowwise for matrices)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-1]:
        raise OneClassError(f"embedding lengths differ: {a.shape[-1]} vs {b.shape[-1]}")
    out = np.abs(a - b).sum(axis=-1)
    return float(out) if out.ndim == 0 else out


def init_center(params: Params, normal_sample: np.ndarray) -> np.ndarray:
    """Mean of the sample's embeddings, clipped away from sigmoid saturation."""
    normal_sample = np.atleast_2d(np.asarray(normal_sample, dtype=np.float64))
    if normal_sample.shape[0] == 0:
        raise OneClassError("center initialization needs a nonempty normal sample")
    emb = encode(params, normal_sample)
    return np.clip(emb.mean(axis=0), 0.05, 0.95)


def loss_and_grads(
    params: Params,
    zq: np.ndarray,
    zn: np.ndarray | None,
    center: np.ndarray,
    delta: float,
    weight_decay: float,
    mode: str = MODE_SEMI,
) -> tuple[float, Params]:
    """Batch loss (center pull + hinge + weight decay) and its gradients."""
    zq = np.atleast_2d(zq)
    b = zq.shape[0]
    eq, cache_q = _forward(params, zq)
    dist_c = np.abs(eq - center).sum(axis=1)
    deq = np.sign(eq - center) / b

    if mode == MODE_SEMI:
        if zn is None:
            raise OneClassError("semi mode needs negative samples")
        zn = np.atleast_2d(zn)
        en, cache_n = _forward(params, zn)
        dist_qn = np.abs(eq - en).sum(axis=1)
        hinge = np.maximum(delta - dist_qn, 0.0)
        active = (delta - dist_qn) > 0
        pair_sign = np.sign(eq - en)
        deq += np.where(active[:, None], -pair_sign, 0.0) / b
        den = np.where(active[:, None], pair_sign, 0.0) / b
        data_loss = float((dist_c + hinge).mean())
        grads = _backward(params, cache_q, deq)
        grads_n = _backward(params, cache_n, den)
        for k in PARAM_KEYS:
            grads[k] += grads_n[k]
    else:
        data_loss = float(dist_c.mean())
        grads = _backward(params, cache_q, deq)

    reg = 0.0
    for k in DECAY_KEYS:
        reg += float((params[k] ** 2).sum())
        grads[k] += 2.0 * weight_decay * params[k]
    return data_loss + weight_decay * reg, grads


class Adam:
    """Adaptive-moment first-order optimizer (bias-corrected)."""

    def __init__(self, params: Params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


def center_distances(params: Params, z: np.ndarray, center: np.ndarray) -> np.ndarray:
    emb = encode(params, np.atleast_2d(z))
    return np.abs(emb - center).sum(axis=1)


def train_one_class(
    normals: np.ndarray,
    anomalies: np.ndarray | None,
    cfg: OneClassConfig,
    validation: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[OneClassModel, TrainHistory]:
    """Train the encoder and finalize (center, radius).

    `normals` is the labeled-normal plus unlabeled pool; `anomalies` the
    labeled anomalies ("semi" mode only). Early stopping tracks the best
    threshold-swept F1 on the validation split and restores that epoch.
    """
    normals = np.asarray(normals, dtype=np.float64)
    if normals.ndim != 2 or normals.shape[0] == 0:
        raise OneClassError("training needs a nonempty normal pool")
    n, d = normals.shape
    if cfg.mode == MODE_SEMI:
        if anomalies is None or len(anomalies) == 0:
            raise OneClassError(
                "semi mode needs at least one labeled anomaly; use mode='dsvdd' without labels"
            )
        anomalies = np.asarray(anomalies, dtype=np.float64)

    rng = np.random.default_rng(cfg.seed)
    params = init_params(d, cfg.hidden, cfg.embed, rng)
    center = init_center(params, normals)
    opt = Adam(params, cfg.learning_rate)
    history = TrainHistory()

    best_params = copy.deepcopy(params)
    best_metric = -np.inf
    patience_left = cfg.patience

    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            zq = normals[idx]
            zn = None
            if cfg.mode == MODE_SEMI:
                zn = anomalies[rng.integers(0, anomalies.shape[0], size=idx.size)]
            loss, grads = loss_and_grads(
                params, zq, zn, center, cfg.delta, cfg.weight_decay, cfg.mode
            )
            opt.step(params, grads)
            epoch_loss += loss
            n_batches += 1
        history.losses.append(epoch_loss / max(n_batches, 1))
        history.train_center_dist.append(float(center_distances(params, normals, center).mean()))

        if validation is not None:
            xv, yv = validation
            f1 = best_f1(center_distances(params, xv, center), yv)
            history.val_f1.append(f1)
            if f1 > best_metric + 1e-12:
                best_metric = f1
                best_params = copy.deepcopy(params)
                history.best_epoch = epoch
                patience_left = cfg.patience
            else:
                patience_left -= 1
                if patience_left <= 0:
                    break

    if validation is not None:
        params = best_params
    radius = float(center_distances(params, normals, center).max())
    model = OneClassModel(
        params=params,
        center=center,
        radius=radius,
        mode=cfg.mode,
        delta=cfg.delta,
        weight_decay=cfg.weight_decay,
    )
    return model, history


def score(model: OneClassModel, z: np.ndarray) -> float | np.ndarray:
    """Clip(center distance / radius, 0, 1)."""
    if model.radius <= 0:
        raise OneClassError(f"model radius must be > 0, got {model.radius}")
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    dists = center_distances(model.params, z, model.center)
    out = np.clip(dists / model.radius, 0.0, 1.0)
    return float(out[0]) if single else out
