"""Binary tensor checkpoints.

Layout: 8-byte little-endian header length, UTF-8 JSON header, then raw
little-endian float64 payloads in header order. Offsets in the header are
relative to the first payload byte.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = "predict-cluster-checkpoint"
VERSION = 1


def write_tensors(path, tensors: dict, meta: dict) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
        offset += a.nbytes
        blobs.append(a.tobytes())
    header = dict(meta)
    header.update({"format": MAGIC, "version": VERSION, "dtype": "float64-le", "tensors": entries})
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for b in blobs:
            fh.write(b)


def read_tensors(path):
    data = Path(path).read_bytes()
    if len(data) < 8:
        raise ValueError(f"{path}: truncated checkpoint")
    (n,) = struct.unpack("<Q", data[:8])
    header = json.loads(data[8:8 + n].decode("utf-8"))
    if header.get("format") != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    base = 8 + n
    tensors = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        buf = data[start:start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise ValueError(f"{path}: truncated payload for {e['name']}")
        tensors[e["name"]] = np.frombuffer(buf, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return tensors, header


def save_model(model, path) -> None:
    write_tensors(path, model.params, {
        "kind": "seq2seq",
        "dims": model.dims.to_dict(),
        "strategy": model.dims.strategy,
        "seed": model.seed,
    })


def load_model(path):
    from .model import ModelDims, Seq2Seq, param_shapes

    tensors, header = read_tensors(path)
    if header.get("kind") != "seq2seq":
        raise ValueError(f"{path}: not a sequence-model checkpoint")
    dims = ModelDims(**header["dims"])
    expected = param_shapes(dims)
    for name, shape in expected.items():
        if name not in tensors or tensors[name].shape != tuple(shape):
            raise ValueError(f"{path}: tensor {name} missing or misshapen")
    return Seq2Seq(dims, {k: tensors[k] for k in expected}, header.get("seed"))


def save_aec(aec, path) -> None:
    tensors = {}
    for i, (W, b) in enumerate(aec.layers):
        tensors[f"aec.{i}.W"] = W
        tensors[f"aec.{i}.b"] = b
    write_tensors(path, tensors, {"kind": "aec", "dims": list(aec.dims)})


def load_aec(path):
    from .features import AecParams

    tensors, header = read_tensors(path)
    if header.get("kind") != "aec":
        raise ValueError(f"{path}: not an autoencoder checkpoint")
    n = len(header["dims"]) - 1
    return AecParams([(tensors[f"aec.{i}.W"], tensors[f"aec.{i}.b"]) for i in range(n)])
