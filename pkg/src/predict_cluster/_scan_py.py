"""Pure-numpy GRU time scan (fallback for the compiled kernel).

Gate blocks in every stacked tensor are ordered reset, update, candidate.
Shapes: ``xproj`` (T, B, 3H) holds ``W x_t + b`` for all steps, ``U`` is
(3H, H), ``mask`` is (T, B) with 1.0 for real frames.
"""
from __future__ import annotations

import numpy as np


def sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def scan_forward(xproj, U, h0, mask, reverse=False):
    T, B, H3 = xproj.shape
    H = H3 // 3
    Urz = U[: 2 * H]
    Uh = U[2 * H:]
    hs = np.empty((T, B, H))
    hprev = np.empty((T, B, H))
    r_all = np.empty((T, B, H))
    z_all = np.empty((T, B, H))
    c_all = np.empty((T, B, H))
    h = np.array(h0, dtype=np.float64, copy=True)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        hprev[t] = h
        a = xproj[t]
        rz = sigmoid(a[:, : 2 * H] + h @ Urz.T)
        r = rz[:, :H]
        z = rz[:, H:]
        c = np.tanh(a[:, 2 * H:] + (r * h) @ Uh.T)
        m = mask[t][:, None]
        h = m * ((1.0 - z) * h + z * c) + (1.0 - m) * h
        hs[t] = h
        r_all[t] = r
        z_all[t] = z
        c_all[t] = c
    return hs, (hprev, r_all, z_all, c_all)


def scan_backward(dhs, U, cache, mask, reverse=False):
    """Backpropagate through a scan.

    ``dhs[t]`` is the loss gradient flowing directly into the state emitted
    at step ``t``. Returns (dxproj, dU, dh0).
    """
    hprev, r_all, z_all, c_all = cache
    T, B, H = dhs.shape
    Urz = U[: 2 * H]
    Uh = U[2 * H:]
    dxproj = np.zeros((T, B, 3 * H))
    dU = np.zeros_like(U)
    dh = np.zeros((B, H))
    steps = range(T) if reverse else range(T - 1, -1, -1)
    for t in steps:
        dh = dh + dhs[t]
        m = mask[t][:, None]
        g = m * dh
        h = hprev[t]
        r, z, c = r_all[t], z_all[t], c_all[t]
        dc = g * z
        dz = g * (c - h)
        dac = dc * (1.0 - c * c)
        drh = dac @ Uh
        dr = drh * h
        dar = dr * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        darz = np.concatenate([dar, daz], axis=1)
        dxproj[t, :, : 2 * H] = darz
        dxproj[t, :, 2 * H:] = dac
        dU[: 2 * H] += darz.T @ h
        dU[2 * H:] += dac.T @ (r * h)
        dh = (1.0 - m) * dh + g * (1.0 - z) + drh * r + darz @ Urz
    return dxproj, dU, dh
