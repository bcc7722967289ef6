from __future__ import annotations

import numpy as np

LOSS_KINDS = ("mse", "mae")


def _check(X, Xh, mask):
    X = np.asarray(X, dtype=np.float64)
    Xh = np.asarray(Xh, dtype=np.float64)
    if X.shape != Xh.shape:
        raise ValueError(f"shape mismatch {X.shape} vs {Xh.shape}")
    squeeze = X.ndim == 2
    if squeeze:
        X, Xh = X[None], Xh[None]
    if mask is None:
        mask = np.ones(X.shape[:2])
    mask = np.asarray(mask, dtype=np.float64).reshape(X.shape[:2])
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("all frames masked")
    return X, Xh, mask, counts


def reconstruction_loss(X, Xh, mask=None, kind: str = "mse") -> float:
    """Mean over valid frames of the per-frame coordinate mean of squared/absolute error.

    Batched inputs (B, T, D) average the per-sequence losses.
    """
    return loss_and_grad(X, Xh, mask, kind)[0]


def loss_and_grad(X, Xh, mask=None, kind: str = "mse"):
    """Loss value and its gradient with respect to the reconstruction ``Xh``."""
    squeeze = np.ndim(X) == 2
    X, Xh, mask, counts = _check(X, Xh, mask)
    B, T, D = X.shape
    diff = Xh - X
    if kind == "mse":
        per = (diff * diff).mean(axis=2)
        dper = 2.0 * diff
    elif kind == "mae":
        per = np.abs(diff).mean(axis=2)
        dper = np.sign(diff)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    w = mask / counts[:, None] / B
    loss = float((per * w).sum())
    grad = dper * (w / D)[:, :, None]
    return loss, (grad[0] if squeeze else grad)
