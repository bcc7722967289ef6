"""GRU sequence autoencoder: bi-directional encoder with FW or FS weak decoders.

GRU convention (gate blocks stacked as reset, update, candidate)::

    r  = sigmoid(W_r x + U_r h + b_r)
    z  = sigmoid(W_z x + U_z h + b_z)
    hc = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * hc

Batched tensors are (B, T, D); encoder masks are (B, T) with 1 for real frames.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._scan_py import sigmoid
from .losses import loss_and_grad

STRATEGIES = ("FW", "FS")

# Range multiplier for the frozen FW decoder's recurrent matrix. At gain 1 the
# zero-input decoder contracts to a fixed point within a few steps, so later
# frames carry almost nothing of E_T and the encoder gets little signal.
FW_RECURRENT_GAIN = 3.0


class DivergenceError(FloatingPointError):
    """Loss or gradients became non-finite."""


@dataclass(frozen=True)
class ModelDims:
    input_dim: int
    hidden: int = 1024
    layers: int = 3
    strategy: str = "FW"

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if min(self.input_dim, self.hidden, self.layers) < 1:
            raise ValueError("input_dim, hidden and layers must be >= 1")

    @property
    def state_dim(self) -> int:
        return 2 * self.hidden

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": self.hidden,
                "layers": self.layers, "strategy": self.strategy}


@dataclass
class GruCellParams:
    W: np.ndarray  # (3H, D)
    U: np.ndarray  # (3H, H)
    b: np.ndarray  # (3H,)

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    def _blk(self, a, k):
        H = self.hidden
        return a[k * H:(k + 1) * H]

    W_r = property(lambda s: s._blk(s.W, 0))
    W_z = property(lambda s: s._blk(s.W, 1))
    W_h = property(lambda s: s._blk(s.W, 2))
    U_r = property(lambda s: s._blk(s.U, 0))
    U_z = property(lambda s: s._blk(s.U, 1))
    U_h = property(lambda s: s._blk(s.U, 2))
    b_r = property(lambda s: s._blk(s.b, 0))
    b_z = property(lambda s: s._blk(s.b, 1))
    b_h = property(lambda s: s._blk(s.b, 2))

    @classmethod
    def from_gates(cls, W_r, W_z, W_h, U_r, U_z, U_h, b_r, b_z, b_h):
        f = lambda *a: np.concatenate([np.atleast_1d(np.asarray(x, dtype=np.float64)) for x in a])
        return cls(W=np.concatenate([np.atleast_2d(W_r), np.atleast_2d(W_z), np.atleast_2d(W_h)]).astype(np.float64),
                   U=np.concatenate([np.atleast_2d(U_r), np.atleast_2d(U_z), np.atleast_2d(U_h)]).astype(np.float64),
                   b=f(b_r, b_z, b_h))


def param_shapes(dims: ModelDims) -> dict:
    H, D, Dh = dims.hidden, dims.input_dim, dims.state_dim
    shapes = {}
    for l in range(dims.layers):
        din = D if l == 0 else 2 * H
        for d in ("fwd", "bwd"):
            shapes[f"enc.{l}.{d}.W"] = (3 * H, din)
            shapes[f"enc.{l}.{d}.U"] = (3 * H, H)
            shapes[f"enc.{l}.{d}.b"] = (3 * H,)
    shapes["dec.W"] = (3 * Dh, D)
    shapes["dec.U"] = (3 * Dh, Dh)
    shapes["dec.b"] = (3 * Dh,)
    shapes["dec.Wy"] = (D, Dh)
    shapes["dec.by"] = (D,)
    return shapes


@dataclass
class Seq2Seq:
    dims: ModelDims
    params: dict
    seed: int | None = None
    backend: str | None = field(default=None, compare=False)

    @property
    def strategy(self) -> str:
        return self.dims.strategy

    def is_trainable(self, name: str) -> bool:
        return not (self.strategy == "FW" and name.startswith("dec."))

    def trainable_names(self) -> list[str]:
        return [k for k in self.params if self.is_trainable(k)]

    def cell(self, prefix: str) -> GruCellParams:
        p = self.params
        return GruCellParams(p[prefix + ".W"], p[prefix + ".U"], p[prefix + ".b"])

    def copy(self) -> "Seq2Seq":
        return Seq2Seq(self.dims, {k: v.copy() for k, v in self.params.items()}, self.seed, self.backend)

    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))


@dataclass
class EncoderState:
    E: np.ndarray  # (2H,) or (B, 2H)
    trajectory: np.ndarray | None = None  # (T, 2H) or (B, T, 2H)


def init_params(dims: ModelDims, seed: int = 0, recurrent_gain: float | None = None) -> Seq2Seq:
    """Uniform init on [-1/sqrt(fan_in), 1/sqrt(fan_in)]; biases use the hidden size.

    ``dec.U`` is drawn on ``recurrent_gain`` times that range. The default is
    ``FW_RECURRENT_GAIN`` for FW models and 1 for FS, whose decoder state input
    is pinned to E_T and never iterates.
    """
    if recurrent_gain is None:
        recurrent_gain = FW_RECURRENT_GAIN if dims.strategy == "FW" else 1.0
    if not recurrent_gain > 0:
        raise ValueError(f"recurrent_gain must be positive, got {recurrent_gain}")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(dims).items():
        if len(shape) == 2:
            fan_in = shape[1]
        elif name == "dec.by":
            fan_in = dims.state_dim
        else:
            fan_in = shape[0] // 3
        lim = 1.0 / np.sqrt(fan_in)
        if name == "dec.U":
            lim *= recurrent_gain
        params[name] = rng.uniform(-lim, lim, size=shape)
    return Seq2Seq(dims, params, seed)


# ---------------------------------------------------------------- cell


def cell_forward(W, U, b, x, h):
    """One batched GRU step. x (B, D), h (B, H). Returns (h', cache)."""
    H = U.shape[1]
    a = x @ W.T + b
    rz = sigmoid(a[:, :2 * H] + h @ U[:2 * H].T)
    r, z = rz[:, :H], rz[:, H:]
    c = np.tanh(a[:, 2 * H:] + (r * h) @ U[2 * H:].T)
    return (1.0 - z) * h + z * c, (x, h, r, z, c)


def cell_backward(dh_new, cache, W, U):
    """Gradients (dx, dh, dW, dU, db) of one batched GRU step."""
    x, h, r, z, c = cache
    H = U.shape[1]
    dac = dh_new * z * (1.0 - c * c)
    dz = dh_new * (c - h)
    drh = dac @ U[2 * H:]
    dar = drh * h * r * (1.0 - r)
    daz = dz * z * (1.0 - z)
    da = np.concatenate([dar, daz, dac], axis=1)
    dU = np.concatenate([np.concatenate([dar, daz], axis=1).T @ h, dac.T @ (r * h)])
    dh = dh_new * (1.0 - z) + drh * r + np.concatenate([dar, daz], axis=1) @ U[:2 * H]
    return da @ W, dh, da.T @ x, dU, da.sum(axis=0)


def gru_step(p: GruCellParams, x, h):
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.shape != (p.W.shape[1],) or h.shape != (p.hidden,):
        raise ValueError(f"shape mismatch: x {x.shape}, h {h.shape} for cell W {p.W.shape}, U {p.U.shape}")
    out, _ = cell_forward(p.W, p.U, p.b, x[None], h[None])
    return out[0]


# ---------------------------------------------------------------- encoder


def _as_batch(X, mask):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if mask is None:
        mask = np.ones(X.shape[:2])
    mask = np.asarray(mask, dtype=np.float64).reshape(X.shape[:2])
    return X, mask, single


def _encoder_forward(model: Seq2Seq, X, mask):
    # internal layout is time-major (T, B, .) so projections are single GEMMs
    B, T, D = X.shape
    if D != model.dims.input_dim:
        raise ValueError(f"input dim {D} does not match model input_dim {model.dims.input_dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError("encoder input contains non-finite values")
    H = model.dims.hidden
    maskT = np.ascontiguousarray(mask.T)
    h0 = np.zeros((B, H))
    inp = np.ascontiguousarray(X.transpose(1, 0, 2)).reshape(T * B, D)
    caches = []
    for l in range(model.dims.layers):
        outs, dcache = [], []
        for d, rev in (("fwd", False), ("bwd", True)):
            c = model.cell(f"enc.{l}.{d}")
            xproj = (inp @ c.W.T + c.b).reshape(T, B, 3 * H)
            hs, cache = kernels.scan_forward(xproj, c.U, h0, maskT, rev, backend=model.backend)
            outs.append(hs)
            dcache.append(cache)
        caches.append((inp, dcache))
        inp = np.concatenate(outs, axis=2).reshape(T * B, 2 * H)
    E = np.concatenate([outs[0][T - 1], outs[1][0]], axis=1)
    out = inp.reshape(T, B, 2 * H).transpose(1, 0, 2)
    return E, out, (caches, maskT)


def _encoder_backward(model: Seq2Seq, dE, enc_cache, grads):
    caches, maskT = enc_cache
    H = model.dims.hidden
    T, B = maskT.shape
    dout = [np.zeros((T, B, H)), np.zeros((T, B, H))]
    dout[0][T - 1] = dE[:, :H]
    dout[1][0] = dE[:, H:]
    for l in range(model.dims.layers - 1, -1, -1):
        inp, dcache = caches[l]
        dinp = np.zeros_like(inp) if l > 0 else None
        for k, (d, rev) in enumerate((("fwd", False), ("bwd", True))):
            name = f"enc.{l}.{d}"
            c = model.cell(name)
            dxproj, dU, _ = kernels.scan_backward(dout[k], c.U, dcache[k], maskT, rev, backend=model.backend)
            flat = dxproj.reshape(T * B, 3 * H)
            grads[name + ".W"] = flat.T @ inp
            grads[name + ".U"] = dU
            grads[name + ".b"] = flat.sum(axis=0)
            if dinp is not None:
                dinp += flat @ c.W
        if dinp is not None:
            d3 = dinp.reshape(T, B, 2 * H)
            dout = [np.ascontiguousarray(d3[:, :, :H]), np.ascontiguousarray(d3[:, :, H:])]


def encode(model: Seq2Seq, X, mask=None, trajectory: bool = False) -> EncoderState:
    """Final encoder state E_T = [forward final, backward final] of the last layer.

    Masked steps carry the state through unchanged. Accepts (T, D) or (B, T, D).
    """
    X, mask, single = _as_batch(X, mask)
    E, out, _ = _encoder_forward(model, X, mask)
    traj = out if trajectory else None
    if single:
        return EncoderState(E[0], None if traj is None else traj[0])
    return EncoderState(E, traj)


# ---------------------------------------------------------------- decoders


def _check_strategy(model, want):
    if model.strategy != want:
        raise ValueError(f"decoder strategy is {model.strategy}, expected {want}")


def _fw_forward(model: Seq2Seq, E, T):
    p = model.params
    B = E.shape[0]
    xproj = np.broadcast_to(p["dec.b"], (T, B, p["dec.b"].shape[0]))
    hs, cache = kernels.scan_forward(xproj, p["dec.U"], E, np.ones((T, B)), False, backend=model.backend)
    Y = hs.transpose(1, 0, 2) @ p["dec.Wy"].T + p["dec.by"]
    return Y, (hs, cache)


def _fw_backward(model: Seq2Seq, dY, fw_cache):
    hs, cache = fw_cache
    p = model.params
    T, B, _ = hs.shape
    dhs = (dY @ p["dec.Wy"]).transpose(1, 0, 2)
    _, _, dE = kernels.scan_backward(dhs, p["dec.U"], cache, np.ones((T, B)), False, backend=model.backend)
    return dE


def decode_fw(model: Seq2Seq, E, T: int):
    """Unconditional decoding from h_0 = E_T with zero inputs and a linear readout."""
    _check_strategy(model, "FW")
    E = np.asarray(E, dtype=np.float64)
    single = E.ndim == 1
    Y, _ = _fw_forward(model, np.atleast_2d(E), T)
    return Y[0] if single else Y


def _fs_forward(model: Seq2Seq, E, T, trace=None):
    p = model.params
    W, U, b, Wy, by = p["dec.W"], p["dec.U"], p["dec.b"], p["dec.Wy"], p["dec.by"]
    B = E.shape[0]
    xhat = np.zeros((B, model.dims.input_dim))
    steps = []
    Y = np.empty((B, T, model.dims.input_dim))
    for t in range(T):
        if trace is not None:
            trace.append(E.copy())
        h, cache = cell_forward(W, U, b, xhat, E)  # recurrent input pinned to E_T
        y = np.tanh(h @ Wy.T + by)
        yhat = y + xhat
        steps.append((cache, h, y))
        Y[:, t] = yhat
        xhat = yhat
    return Y, steps


def _fs_backward(model: Seq2Seq, dY, steps, grads):
    p = model.params
    W, U, Wy = p["dec.W"], p["dec.U"], p["dec.Wy"]
    B, T, D = dY.shape
    gW = np.zeros_like(W)
    gU = np.zeros_like(U)
    gb = np.zeros_like(p["dec.b"])
    gWy = np.zeros_like(Wy)
    gby = np.zeros_like(p["dec.by"])
    dE = np.zeros((B, model.dims.state_dim))
    dnext = np.zeros((B, D))
    for t in range(T - 1, -1, -1):
        cache, h, y = steps[t]
        dyhat = dY[:, t] + dnext
        day = dyhat * (1.0 - y * y)
        gWy += day.T @ h
        gby += day.sum(axis=0)
        dx, dh, dW_, dU_, db_ = cell_backward(day @ Wy, cache, W, U)
        gW += dW_
        gU += dU_
        gb += db_
        dE += dh
        dnext = dyhat + dx  # residual path plus cell input path
    grads.update({"dec.W": gW, "dec.U": gU, "dec.b": gb, "dec.Wy": gWy, "dec.by": gby})
    return dE


def decode_fs(model: Seq2Seq, E, T: int, trace: list | None = None):
    """Conditional decoding with the recurrent input fixed to E_T and a residual readout.

    If ``trace`` is a list, the recurrent-state input of every step is appended to it.
    """
    _check_strategy(model, "FS")
    E = np.asarray(E, dtype=np.float64)
    single = E.ndim == 1
    Y, _ = _fs_forward(model, np.atleast_2d(E), T, trace)
    return Y[0] if single else Y


def decode(model: Seq2Seq, E, T: int):
    return decode_fw(model, E, T) if model.strategy == "FW" else decode_fs(model, E, T)


def reconstruct(model: Seq2Seq, X, mask=None):
    X, mask, single = _as_batch(X, mask)
    E, _, _ = _encoder_forward(model, X, mask)
    Y = decode(model, E, X.shape[1])
    return Y[0] if single else Y


# ---------------------------------------------------------------- gradients


def backward(model: Seq2Seq, X, mask=None, loss_kind: str = "mse"):
    """Loss of regenerating ``X`` from its own encoding, with exact BPTT gradients.

    Returns (loss, grads, dE). ``grads`` maps every trainable parameter name to
    its gradient; frozen FW decoder tensors are absent.
    """
    X, mask, single = _as_batch(X, mask)
    T = X.shape[1]
    E, _, enc_cache = _encoder_forward(model, X, mask)
    grads = {}
    if model.strategy == "FW":
        Y, dec_cache = _fw_forward(model, E, T)
    else:
        Y, dec_cache = _fs_forward(model, E, T)
    loss, dY = loss_and_grad(X, Y, mask, loss_kind)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite reconstruction loss ({loss})")
    if model.strategy == "FW":
        dE = _fw_backward(model, dY, dec_cache)
    else:
        dE = _fs_backward(model, dY, dec_cache, grads)
    _encoder_backward(model, dE, enc_cache, grads)
    ordered = {k: grads[k] for k in model.params if k in grads}
    return loss, ordered, (dE[0] if single else dE)


def loss_value(model: Seq2Seq, X, mask=None, loss_kind: str = "mse") -> float:
    X, mask, _ = _as_batch(X, mask)
    return loss_and_grad(X, reconstruct(model, X, mask), mask, loss_kind)[0]
