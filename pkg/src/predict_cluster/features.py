"""Encoder features, feature-level autoencoder, 1-NN cosine classification, PCA."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Seq2Seq, encode

AEC_HIDDEN = (1024, 512, 256, 512, 1024)
BOTTLENECK_LAYER = 2


@dataclass(frozen=True)
class FeatureRecord:
    feature: np.ndarray
    label: int
    id: str


def stack(records):
    """(features (n, d), labels (n,), ids list) from records."""
    F = np.stack([np.asarray(r.feature, dtype=np.float64) for r in records])
    return F, np.array([r.label for r in records], dtype=np.int64), [r.id for r in records]


def records_from(F, labels, ids):
    return [FeatureRecord(np.asarray(f), int(l), str(i)) for f, l, i in zip(F, labels, ids)]


def extract_features(model: Seq2Seq, dataset, batch_size: int = 256) -> list[FeatureRecord]:
    """One E_T record per sequence of ``dataset``."""
    X, mask = dataset.arrays()
    labels = dataset.labels()
    ids = dataset.ids()
    feats = [encode(model, X[i:i + batch_size], mask[i:i + batch_size]).E
             for i in range(0, len(X), batch_size)]
    F = np.concatenate(feats) if feats else np.zeros((0, model.dims.state_dim))
    return records_from(F, labels, ids)


# ---------------------------------------------------------------- autoencoder


@dataclass
class AecParams:
    layers: list  # [(W (out, in), b (out,))]

    @property
    def dims(self) -> tuple:
        return (self.layers[0][0].shape[1],) + tuple(W.shape[0] for W, _ in self.layers)

    def copy(self) -> "AecParams":
        return AecParams([(W.copy(), b.copy()) for W, b in self.layers])


def aec_dims(feature_dim: int = 2048) -> tuple:
    return (feature_dim,) + AEC_HIDDEN + (feature_dim,)


def init_aec(feature_dim: int = 2048, seed: int = 0) -> AecParams:
    rng = np.random.default_rng(seed)
    dims = aec_dims(feature_dim)
    layers = []
    for din, dout in zip(dims[:-1], dims[1:]):
        lim = 1.0 / np.sqrt(din)
        layers.append((rng.uniform(-lim, lim, (dout, din)), rng.uniform(-lim, lim, dout)))
    return AecParams(layers)


def aec_forward(aec: AecParams, F):
    """Reconstruction and per-layer activations (input first)."""
    acts = [np.atleast_2d(F)]
    n = len(aec.layers)
    for i, (W, b) in enumerate(aec.layers):
        a = acts[-1] @ W.T + b
        acts.append(a if i == n - 1 else np.tanh(a))
    return acts[-1], acts


def aec_loss_and_grads(aec: AecParams, F):
    """Mean absolute reconstruction error and its parameter gradients."""
    F = np.atleast_2d(F)
    out, acts = aec_forward(aec, F)
    diff = out - F
    loss = float(np.abs(diff).mean())
    g = np.sign(diff) / diff.size
    grads = [None] * len(aec.layers)
    for i in range(len(aec.layers) - 1, -1, -1):
        W, _ = aec.layers[i]
        if i < len(aec.layers) - 1:
            g = g * (1.0 - acts[i + 1] ** 2)
        grads[i] = (g.T @ acts[i], g.sum(axis=0))
        g = g @ W
    return loss, grads


def aec_loss(aec: AecParams, F) -> float:
    out, _ = aec_forward(aec, F)
    return float(np.abs(out - np.atleast_2d(F)).mean())


def _aec_to_dict(aec: AecParams) -> dict:
    out = {}
    for i, (W, b) in enumerate(aec.layers):
        out[f"{i}.W"], out[f"{i}.b"] = W, b
    return out


def _aec_from_dict(d: dict) -> AecParams:
    return AecParams([(d[f"{i}.W"], d[f"{i}.b"]) for i in range(len(d) // 2)])


def train_autoencoder(features, epochs: int = 100, lr: float = 1e-3, seed: int = 0,
                      batch_size: int = 64, aec: AecParams | None = None,
                      log: list | None = None) -> AecParams:
    """Fit the feature autoencoder with Adam on training features only.

    ``log`` (a list) receives the full-data reconstruction MAE after each epoch.
    """
    from .model import DivergenceError
    from .trainer import AdamState, adam_update

    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if len(F) == 0:
        raise ValueError("autoencoder training needs at least one feature vector")
    aec = aec.copy() if aec is not None else init_aec(F.shape[1], seed)
    if aec.dims[0] != F.shape[1]:
        raise ValueError(f"feature dim {F.shape[1]} does not match autoencoder input {aec.dims[0]}")
    rng = np.random.default_rng([seed, 1])
    params = _aec_to_dict(aec)
    state = AdamState.zeros(params)
    for _ in range(epochs):
        order = rng.permutation(len(F))
        for s in range(0, len(F), batch_size):
            loss, grads = aec_loss_and_grads(_aec_from_dict(params), F[order[s:s + batch_size]])
            if not np.isfinite(loss):
                raise DivergenceError("autoencoder loss became non-finite")
            g = {}
            for i, (gW, gb) in enumerate(grads):
                g[f"{i}.W"], g[f"{i}.b"] = gW, gb
            params, state = adam_update(params, g, state, lr)
        if log is not None:
            log.append(aec_loss(_aec_from_dict(params), F))
    return _aec_from_dict(params)


def bottleneck(aec: AecParams, feature):
    """Post-tanh output of the third layer (256 values at the default sizes)."""
    h = np.asarray(feature, dtype=np.float64)
    for W, b in aec.layers[:BOTTLENECK_LAYER + 1]:
        h = np.tanh(h @ W.T + b)
    return h


# ---------------------------------------------------------------- classification


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _unit_rows(F):
    n = np.linalg.norm(F, axis=1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("cosine classification needs nonzero feature vectors")
    return F / n


def knn_predict(train_F, train_labels, train_ids, query_F, k: int = 1):
    """Vectorized cosine k-NN. Similarity ties go to the lowest training id."""
    if len(train_F) == 0:
        raise ValueError("empty training set")
    order = sorted(range(len(train_ids)), key=lambda i: train_ids[i])
    T = _unit_rows(np.asarray(train_F, dtype=np.float64)[order])
    labels = np.asarray(train_labels)[order]
    S = _unit_rows(np.atleast_2d(np.asarray(query_F, dtype=np.float64))) @ T.T
    if k == 1:
        return labels[np.argmax(S, axis=1)]
    # majority vote among the k nearest; vote ties resolved by the nearest member
    nn = np.argsort(-S, axis=1, kind="stable")[:, :k]
    preds = []
    for row in nn:
        votes = {}
        for rank, j in enumerate(row):
            cnt, first = votes.get(labels[j], (0, rank))
            votes[labels[j]] = (cnt + 1, first)
        preds.append(min(votes, key=lambda l: (-votes[l][0], votes[l][1])))
    return np.array(preds)


def knn_classify(train: list[FeatureRecord], query, k: int = 1) -> int:
    F, labels, ids = stack(train) if train else (np.zeros((0, 1)), [], [])
    return int(knn_predict(F, labels, ids, np.asarray(query)[None], k)[0])


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = true class, columns = predicted
    classes: list

    def to_csv(self) -> str:
        lines = ["true\\pred," + ",".join(str(c) for c in self.classes)]
        for c, row in zip(self.classes, self.counts):
            lines.append(f"{c}," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"


def evaluate(train: list[FeatureRecord], test: list[FeatureRecord], k: int = 1):
    """1-NN accuracy of ``test`` against ``train`` plus the confusion matrix."""
    Ftr, ltr, itr = stack(train)
    Fte, lte, _ = stack(test)
    pred = knn_predict(Ftr, ltr, itr, Fte, k)
    classes = sorted(set(ltr.tolist()) | set(lte.tolist()))
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(lte, pred):
        counts[pos[t], pos[p]] += 1
    return float(np.mean(pred == lte)), ConfusionMatrix(counts, classes)


def split_records(records, dataset):
    train = [records[i] for i in dataset.indices("train")]
    test = [records[i] for i in dataset.indices("test")]
    return train, test


def encoder_accuracy(model: Seq2Seq, dataset) -> float:
    train, test = split_records(extract_features(model, dataset), dataset)
    return evaluate(train, test)[0]


# ---------------------------------------------------------------- PCA


def pca_project(data, out_dims: int = 3):
    """Project onto the top principal axes; returns (projection, explained-variance ratios).

    Missing components (rank deficiency or too few input dims) are zero.
    """
    X = np.asarray(data, dtype=np.float64)
    n, d = X.shape
    if n < out_dims:
        raise ValueError(f"need at least {out_dims} samples, got {n}")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals[::-1], 0.0, None)
    evecs = evecs[:, ::-1]
    total = evals.sum()
    k = min(out_dims, d)
    axes = evecs[:, :k].copy()
    # deterministic sign: largest-magnitude loading positive
    flip = np.sign(axes[np.argmax(np.abs(axes), axis=0), np.arange(k)])
    axes *= np.where(flip == 0, 1.0, flip)
    proj = np.zeros((n, out_dims))
    ratios = np.zeros(out_dims)
    if total > 0:
        keep = evals[:k] > total * 1e-15
        proj[:, :k] = (Xc @ axes) * keep
        ratios[:k] = evals[:k] / total * keep
    return proj, ratios
