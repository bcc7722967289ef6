"""Regeneration training: Adam with step-decayed learning rate and global-norm clipping."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .losses import LOSS_KINDS, reconstruction_loss  # noqa: F401  (re-exported)
from .model import DivergenceError, ModelDims, Seq2Seq, backward, init_params


@dataclass
class TrainConfig:
    loss: str = "mse"
    batch_size: int = 64
    lr: float = 1e-4
    decay: float = 0.95
    decay_every: int = 1000
    clip_norm: float = 25.0
    iterations: int = 0
    eval_every: int = 0  # 0 disables in-loop evaluation
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")
        if self.batch_size < 1 or self.lr <= 0 or self.decay_every < 1 or self.clip_norm <= 0:
            raise ValueError("batch_size, lr, decay_every and clip_norm must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.iterations < 0 or self.eval_every < 0:
            raise ValueError("iterations and eval_every must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    return cfg.lr * cfg.decay ** (step // cfg.decay_every)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: dict, max_norm: float = 25.0):
    """Scale all tensors together when their joint L2 norm exceeds ``max_norm``."""
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads, norm
    s = max_norm / norm
    return {k: g * s for k, g in grads.items()}, norm


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: dict, names=None, **kw) -> "AdamState":
        names = list(params) if names is None else names
        return cls({k: np.zeros_like(params[k]) for k in names},
                   {k: np.zeros_like(params[k]) for k in names}, 0, **kw)


def adam_update(params: dict, grads: dict, state: AdamState, lr: float, trainable=None):
    """One Adam step. Tensors without a gradient or outside ``trainable`` are left as-is."""
    b1, b2 = state.beta1, state.beta2
    step = state.step + 1
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    new_params = dict(params)
    m, v = dict(state.m), dict(state.v)
    for k, g in grads.items():
        if trainable is not None and k not in trainable:
            continue
        m[k] = b1 * state.m[k] + (1.0 - b1) * g
        v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        upd = lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + state.eps)
        if not np.all(np.isfinite(upd)):
            raise DivergenceError(f"non-finite Adam update for {k}")
        new_params[k] = params[k] - upd
    return new_params, AdamState(m, v, step, b1, b2, state.eps)


@dataclass
class TrainLog:
    iteration: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    eval_iteration: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)

    def to_csv(self, timing: bool = True) -> str:
        acc = dict(zip(self.eval_iteration, self.accuracy))
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "loss", "lr", "accuracy", "seconds"])
        for it, loss, lr, sec in zip(self.iteration, self.loss, self.lr, self.seconds):
            a = acc.get(it)
            w.writerow([it, repr(loss), repr(lr), "" if a is None else repr(a),
                        f"{sec:.6f}" if timing else ""])
        return buf.getvalue()

    def mean_loss(self, first: int | None = None, last: int | None = None) -> float:
        vals = self.loss[:first] if first is not None else self.loss[-last:]
        return float(np.mean(vals))


def train(model: Seq2Seq, dataset, cfg: TrainConfig, progress=None):
    """Train the encoder (and FS decoder) to regenerate each training sequence.

    Returns (trained model, TrainLog). Test-split 1-NN accuracy on raw E_T is
    logged every ``cfg.eval_every`` iterations when a test split exists.
    """
    from .features import encoder_accuracy

    model = model.copy()
    train_ds = dataset.subset("train")
    X, mask = train_ds.arrays()
    if X.shape[2] != model.dims.input_dim:
        raise ValueError(f"data dim {X.shape[2]} does not match model input_dim {model.dims.input_dim}")
    log = TrainLog()
    if cfg.iterations == 0:
        return model, log
    names = model.trainable_names()
    state = AdamState.zeros(model.params, names, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    rng = np.random.default_rng(cfg.seed)
    has_test = bool(dataset.indices("test"))
    order, pos = rng.permutation(len(X)), 0
    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        if pos >= len(order):
            order, pos = rng.permutation(len(X)), 0
        idx = order[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        try:
            loss, grads, _ = backward(model, X[idx], mask[idx], cfg.loss)
        except DivergenceError as exc:
            raise DivergenceError(f"iteration {it}: {exc}") from exc
        grads, _ = clip_gradients(grads, cfg.clip_norm)
        lr = lr_schedule(it, cfg)
        try:
            model.params, state = adam_update(model.params, grads, state, lr, trainable=set(names))
        except DivergenceError as exc:
            raise DivergenceError(f"iteration {it}: {exc}") from exc
        log.iteration.append(it)
        log.loss.append(loss)
        log.lr.append(lr)
        log.seconds.append(time.perf_counter() - t0)
        if cfg.eval_every and has_test and ((it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iterations):
            log.eval_iteration.append(it)
            log.accuracy.append(encoder_accuracy(model, dataset))
        if progress is not None:
            progress(it, loss, log)
    return model, log


# ---------------------------------------------------------------- hyper-parameter search


def candidate_dims(cand: dict, input_dim: int) -> ModelDims:
    return ModelDims(input_dim=input_dim, hidden=int(cand.get("hidden", 1024)),
                     layers=int(cand.get("layers", 3)), strategy=cand.get("strategy", "FW"))


def hyperparam_search(space: list, dataset, seed: int = 0) -> list[dict]:
    """Rank candidate architectures by 1-NN accuracy of their untrained encoders.

    Sorted by accuracy descending, ties by fewer parameters. No training happens.
    """
    from .features import encoder_accuracy

    X, _ = dataset.arrays()
    results = []
    for cand in space:
        dims = candidate_dims(cand, X.shape[2])
        model = init_params(dims, int(cand.get("seed", seed)))
        results.append({
            "config": json.loads(json.dumps(cand)),
            "accuracy": encoder_accuracy(model, dataset),
            "num_params": model.num_params(),
        })
    results.sort(key=lambda r: (-r["accuracy"], r["num_params"]))
    return results
