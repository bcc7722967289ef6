"""Body-keypoint sequences: I/O, view-invariant transform, resampling, normalization."""
from __future__ import annotations

import csv
import io
import json
import zipfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

EPS_GEOM = 1e-8
JOINT_ROLES = ("root", "spine", "hip_left", "hip_right")


class SequenceError(ValueError):
    """Malformed or unusable keypoint sequence."""


class DegeneratePoseError(SequenceError):
    """Frame-0 pose too degenerate to define a body frame."""


@dataclass(frozen=True)
class ActionSequence:
    frames: np.ndarray  # (T, J, 3)
    joint_map: dict = field(default_factory=dict)
    label: int | None = None
    subject: int | None = None
    view: int | None = None
    id: str = ""

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise SequenceError(f"frames must have shape (T, J, 3), got {frames.shape}")
        if frames.shape[0] == 0:
            raise SequenceError("empty sequence")
        bad = np.argwhere(~np.isfinite(frames))
        if len(bad):
            t, j, a = (int(v) for v in bad[0])
            raise SequenceError(f"non-finite coordinate at ({t}, {j}, {a})")
        J = frames.shape[1]
        if self.joint_map:
            idx = [self.joint_map[k] for k in JOINT_ROLES if k in self.joint_map]
            if any(not 0 <= i < J for i in idx):
                raise SequenceError(f"joint_map index out of range for J={J}: {self.joint_map}")
            if len(set(idx)) != len(idx):
                raise SequenceError(f"joint_map indices must be distinct: {self.joint_map}")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_joints(self) -> int:
        return self.frames.shape[1]

    def with_frames(self, frames) -> "ActionSequence":
        return replace(self, frames=frames)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "subject": self.subject,
            "view": self.view,
            "num_joints": self.num_joints,
            "joint_map": {k: int(v) for k, v in self.joint_map.items()},
            "frames": self.frames.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSequence":
        try:
            frames = d["frames"]
            num_joints = int(d["num_joints"])
            joint_map = {k: int(v) for k, v in d["joint_map"].items()}
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise SequenceError(f"missing or invalid field: {exc}") from exc
        if len(frames) == 0:
            raise SequenceError("empty sequence")
        try:
            arr = np.array(frames, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise SequenceError(f"ragged or non-numeric frames: {exc}") from exc
        if arr.ndim != 3 or arr.shape[1] != num_joints:
            raise SequenceError(f"frames shape {arr.shape} does not match num_joints={num_joints}")
        return cls(
            frames=arr,
            joint_map=joint_map,
            label=_opt_int(d.get("label")),
            subject=_opt_int(d.get("subject")),
            view=_opt_int(d.get("view")),
            id=str(d.get("id", "")),
        )


def _opt_int(v):
    return None if v is None else int(v)


@dataclass(frozen=True)
class ViewInvariantBasis:
    R: np.ndarray
    d_R: np.ndarray


@dataclass(frozen=True)
class NormStats:
    """Affine normalization bounds. ``mode`` is "global" (one pair) or "axis"."""

    lo: np.ndarray
    hi: np.ndarray
    mode: str = "global"

    def to_dict(self) -> dict:
        return {"mode": self.mode, "min": np.atleast_1d(self.lo).tolist(), "max": np.atleast_1d(self.hi).tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        lo = np.asarray(d["min"], dtype=np.float64)
        hi = np.asarray(d["max"], dtype=np.float64)
        if d.get("mode", "global") == "global":
            lo, hi = lo.reshape(()), hi.reshape(())
        return cls(lo=lo, hi=hi, mode=d.get("mode", "global"))


@dataclass
class Dataset:
    """Sequences with train/test split tags, plus validity masks once resampled."""

    sequences: list
    splits: list
    masks: list | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.splits) != len(self.sequences):
            raise ValueError("one split tag per sequence is required")
        for s in self.splits:
            if s not in ("train", "test"):
                raise ValueError(f"split must be 'train' or 'test', got {s!r}")

    def __len__(self):
        return len(self.sequences)

    def indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    def subset(self, split: str) -> "Dataset":
        idx = self.indices(split)
        return Dataset(
            sequences=[self.sequences[i] for i in idx],
            splits=[split] * len(idx),
            masks=None if self.masks is None else [self.masks[i] for i in idx],
            meta=dict(self.meta),
        )

    def labels(self) -> np.ndarray:
        return np.array([-1 if s.label is None else s.label for s in self.sequences], dtype=np.int64)

    def ids(self) -> list[str]:
        return [s.id for s in self.sequences]

    def arrays(self):
        """Stack into model tensors: X (N, T, J*3), mask (N, T)."""
        X = np.stack([flatten(s) for s in self.sequences])
        if self.masks is None:
            mask = np.ones(X.shape[:2])
        else:
            mask = np.stack([np.asarray(m, dtype=np.float64) for m in self.masks])
        return X, mask


# ---------------------------------------------------------------- I/O


def load_sequence(path, format: str | None = None) -> ActionSequence:
    path = Path(path)
    fmt = format or ("csv" if path.suffix.lower() == ".csv" else "json")
    if fmt == "json":
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SequenceError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(d, dict):
            raise SequenceError(f"{path}: expected a JSON object")
        return ActionSequence.from_dict(d)
    if fmt == "csv":
        return _load_csv(path)
    raise ValueError(f"unknown sequence format {fmt!r}")


def _load_csv(path: Path) -> ActionSequence:
    # Header lines "# key: value" carry metadata; data rows are frame, joint, x, y, z.
    meta = {}
    rows = []
    with path.open(newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                meta[key.strip()] = val.strip()
                continue
            if line.strip():
                rows.append(line)
    if "num_joints" not in meta or "joint_map" not in meta:
        raise SequenceError(f"{path}: CSV header must declare num_joints and joint_map")
    J = int(meta["num_joints"])
    records = list(csv.reader(rows))
    if records and not _is_number(records[0][0]):
        records = records[1:]
    if not records:
        raise SequenceError("empty sequence")
    try:
        T = max(int(r[0]) for r in records) + 1
        frames = np.full((T, J, 3), np.nan)
        for r in records:
            frames[int(r[0]), int(r[1])] = [float(v) for v in r[2:5]]
    except (ValueError, IndexError) as exc:
        raise SequenceError(f"{path}: malformed row: {exc}") from exc
    d = {
        "id": meta.get("id", path.stem),
        "label": None if meta.get("label", "null") in ("", "null", "None") else meta["label"],
        "num_joints": J,
        "joint_map": json.loads(meta["joint_map"]),
        "frames": frames.tolist(),
    }
    for k in ("subject", "view"):
        if meta.get(k, "null") not in ("", "null", "None"):
            d[k] = meta[k]
    return ActionSequence.from_dict(d)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def save_sequence(seq: ActionSequence, path) -> None:
    Path(path).write_text(json.dumps(seq.to_dict()))


def load_manifest(path) -> list[dict]:
    path = Path(path)
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise SequenceError(f"{path}: manifest must be a JSON list")
    out = []
    for e in entries:
        if not isinstance(e, dict) or "path" not in e or "split" not in e:
            raise SequenceError(f"{path}: manifest entries need 'path' and 'split'")
        p = Path(e["path"])
        if not p.is_absolute():
            p = path.parent / p
        out.append({"path": p, "split": e["split"]})
    return out


def load_dataset(manifest_path) -> Dataset:
    entries = load_manifest(manifest_path)
    seqs = []
    for e in entries:
        if not e["path"].exists():
            raise FileNotFoundError(f"sequence file not found: {e['path']}")
        seqs.append(load_sequence(e["path"]))
    return Dataset(seqs, [e["split"] for e in entries], meta={"manifest": str(manifest_path)})


def write_dataset(dataset: Dataset, out_dir) -> Path:
    """Write one canonical JSON per sequence plus ``manifest.json``."""
    out_dir = Path(out_dir)
    seq_dir = out_dir / "sequences"
    seq_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for seq, split in zip(dataset.sequences, dataset.splits):
        name = f"{seq.id}.json"
        save_sequence(seq, seq_dir / name)
        manifest.append({"path": f"sequences/{name}", "split": split})
    mpath = out_dir / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=1))
    return mpath


# ---------------------------------------------------------------- geometry


def compute_basis(seq: ActionSequence, eps: float = EPS_GEOM) -> ViewInvariantBasis:
    jm = seq.joint_map
    missing = [k for k in JOINT_ROLES if k not in jm]
    if missing:
        raise SequenceError(f"joint_map lacks {missing}")
    f0 = seq.frames[0]
    root = f0[jm["root"]]
    v1 = f0[jm["spine"]] - root
    v2 = f0[jm["hip_left"]] - f0[jm["hip_right"]]
    n1 = np.linalg.norm(v1)
    if n1 <= eps:
        raise DegeneratePoseError(f"spine coincides with root in frame 0 (|v1|={n1:.3g})")
    e1 = v1 / n1
    w = v2 - np.dot(v2, e1) * e1
    nw = np.linalg.norm(w)
    if nw <= eps:
        raise DegeneratePoseError(f"hip axis parallel to spine in frame 0 (|v2_perp|={nw:.3g})")
    e2 = w / nw
    e3 = np.cross(e1, e2)
    e3 /= np.linalg.norm(e3)
    return ViewInvariantBasis(R=np.column_stack([e1, e2, e3]), d_R=root.copy())


def apply_view_invariant(seq: ActionSequence, basis: ViewInvariantBasis) -> ActionSequence:
    # R is orthonormal so R^-1 = R^T; row-vector form (x - d) R
    return seq.with_frames((seq.frames - basis.d_R) @ basis.R)


def resample(seq: ActionSequence, t_max: int = 50):
    """Downsample to ``t_max`` frames or zero-pad; returns (sequence, mask)."""
    T = seq.num_frames
    mask = np.zeros(t_max, dtype=bool)
    if T > t_max:
        if t_max == 1:
            idx = np.array([0])
        else:
            # exact integer round-half-up of i*(T-1)/(t_max-1)
            n = t_max - 1
            idx = np.array([(2 * i * (T - 1) + n) // (2 * n) for i in range(t_max)])
        mask[:] = True
        return seq.with_frames(seq.frames[idx]), mask
    out = np.zeros((t_max,) + seq.frames.shape[1:])
    out[:T] = seq.frames
    mask[:T] = True
    return seq.with_frames(out), mask


def fit_norm_stats(dataset: Dataset, mode: str = "global") -> NormStats:
    idx = dataset.indices("train")
    if not idx:
        raise ValueError("normalization statistics need at least one training sequence")
    chunks = []
    for i in idx:
        f = dataset.sequences[i].frames
        if dataset.masks is not None:
            f = f[np.asarray(dataset.masks[i], dtype=bool)]
        chunks.append(f.reshape(-1, 3))
    pts = np.concatenate(chunks)
    if mode == "global":
        lo, hi = np.asarray(pts.min()), np.asarray(pts.max())
    elif mode == "axis":
        lo, hi = pts.min(axis=0), pts.max(axis=0)
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    if np.any(hi <= lo):
        raise ValueError("cannot normalize a constant dataset (max == min)")
    return NormStats(lo=lo, hi=hi, mode=mode)


def normalize(dataset: Dataset, stats: NormStats | None = None, mode: str = "global"):
    """Map coordinates into [-1, 1] using training-split bounds; padding stays zero."""
    if stats is None:
        stats = fit_norm_stats(dataset, mode)
    elif np.any(stats.hi <= stats.lo):
        raise ValueError("invalid NormStats: max must exceed min")
    seqs = []
    for i, seq in enumerate(dataset.sequences):
        y = 2.0 * (seq.frames - stats.lo) / (stats.hi - stats.lo) - 1.0
        if dataset.masks is not None:
            y[~np.asarray(dataset.masks[i], dtype=bool)] = 0.0
        seqs.append(seq.with_frames(y))
    return Dataset(seqs, list(dataset.splits), masks=dataset.masks, meta=dict(dataset.meta)), stats


def flatten(seq: ActionSequence) -> np.ndarray:
    """(T, J, 3) -> (T, J*3), joint-major then axis."""
    return seq.frames.reshape(seq.num_frames, -1)


def unflatten(X: np.ndarray, num_joints: int) -> np.ndarray:
    return np.asarray(X).reshape(X.shape[0], num_joints, 3)


# ---------------------------------------------------------------- pipeline


def preprocess(dataset: Dataset, t_max: int = 50, norm_mode: str = "global",
               stats: NormStats | None = None, view_invariant: bool = True):
    """View-invariant transform, resample and normalize every sequence.

    Degenerate poses are dropped; returns (dataset, stats, skipped_ids).
    """
    seqs, splits, masks, skipped = [], [], [], []
    for seq, split in zip(dataset.sequences, dataset.splits):
        if view_invariant:
            try:
                seq = apply_view_invariant(seq, compute_basis(seq))
            except DegeneratePoseError:
                skipped.append(seq.id)
                continue
        seq, mask = resample(seq, t_max)
        seqs.append(seq)
        splits.append(split)
        masks.append(mask)
    out = Dataset(seqs, splits, masks=masks, meta=dict(dataset.meta))
    out, stats = normalize(out, stats, mode=norm_mode)
    return out, stats, skipped


def _write_npz(path, arrays: dict) -> None:
    """Uncompressed .npz with fixed entry timestamps, so reruns are byte-identical."""
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0)), buf.getvalue())


def save_processed(dataset: Dataset, path) -> None:
    X = np.stack([s.frames for s in dataset.sequences])
    jm = dataset.sequences[0].joint_map if dataset.sequences else {}
    _write_npz(path, {
        "frames": X,
        "mask": np.stack([np.asarray(m, dtype=bool) for m in dataset.masks]),
        "labels": dataset.labels(),
        "subjects": np.array([-1 if s.subject is None else s.subject for s in dataset.sequences]),
        "views": np.array([-1 if s.view is None else s.view for s in dataset.sequences]),
        "ids": np.array(dataset.ids()),
        "splits": np.array(dataset.splits),
        "joint_map": np.array(json.dumps(jm)),
    })


def load_processed(path) -> Dataset:
    with np.load(path, allow_pickle=False) as z:
        jm = json.loads(str(z["joint_map"]))
        seqs = []
        for i in range(z["frames"].shape[0]):
            lab, sub, view = int(z["labels"][i]), int(z["subjects"][i]), int(z["views"][i])
            seqs.append(ActionSequence(
                frames=z["frames"][i],
                joint_map=jm,
                label=None if lab < 0 else lab,
                subject=None if sub < 0 else sub,
                view=None if view < 0 else view,
                id=str(z["ids"][i]),
            ))
        return Dataset(seqs, [str(s) for s in z["splits"]], masks=list(z["mask"]),
                       meta={"archive": str(path)})
