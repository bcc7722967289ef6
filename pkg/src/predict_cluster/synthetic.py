"""Parametric synthetic skeleton motions for desk-scale experiments.

Each class is a family of periodic joint-angle trajectories driving a small
forward-kinematics body (15 joints). Per-sequence variation (phase, speed,
amplitude, body size, jitter) scales with ``noise``; every sequence is then
rendered in a random camera frame.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .skeleton import ActionSequence, Dataset

JOINT_NAMES = (
    "root", "spine", "hip_left", "hip_right", "neck",
    "shoulder_left", "elbow_left", "hand_left",
    "shoulder_right", "elbow_right", "hand_right",
    "knee_left", "foot_left", "knee_right", "foot_right",
)
JOINT_MAP = {"root": 0, "spine": 1, "hip_left": 2, "hip_right": 3}

DOFS = (
    "torso_pitch", "torso_yaw",
    "l_sh_pitch", "l_sh_roll", "l_elbow",
    "r_sh_pitch", "r_sh_roll", "r_elbow",
    "l_hip_pitch", "l_knee", "r_hip_pitch", "r_knee",
    "squat",
)
N_DOF = len(DOFS)


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int = 4
    per_class: int = 50
    frames: int = 50
    joints: int = 15
    noise: float = 0.5
    seed: int = 0
    train_fraction: float = 0.7
    randomize_camera: bool = True
    family_seed: int = 0

    def validate(self):
        if self.classes < 1 or self.per_class < 1 or self.frames < 1:
            raise ValueError("classes, per_class and frames must be >= 1")
        if self.joints < 4:
            raise ValueError("at least 4 joints are needed (root, spine, hips)")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ValueError("train_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class MotionFamily:
    """Angle trajectories theta_k(s) = base_k + amp_k sin(2 pi freq s + phase_k), s in [0, 1]."""

    base: np.ndarray
    amp: np.ndarray
    phase: np.ndarray
    freq: float


_LEFT = np.array(["l_" in d for d in DOFS])
_RIGHT = np.array(["r_" in d for d in DOFS])
FREQS = (1.0, 2.0, 1.5, 2.5, 3.0)


def _phase_patterns(n: int, rng) -> list:
    pats = [np.zeros(N_DOF), np.where(_RIGHT, np.pi, 0.0) + np.where(~(_LEFT | _RIGHT), np.pi / 2, 0.0)]
    while len(pats) < n:
        pats.append(rng.uniform(0, 2 * np.pi, N_DOF))
    return pats[:n]


def make_families(n: int, family_seed: int = 0) -> list[MotionFamily]:
    """Classes share limbs and amplitudes; they differ in frequency and inter-limb phase.

    Class c uses frequency ``FREQS[c % 2]``-style cycling over a 2-wide grid, so
    the first four classes are {slow, fast} x {in-phase, anti-phase}.
    """
    rng = np.random.default_rng([family_seed, 7919])
    amp = rng.uniform(0.3, 0.8, N_DOF)
    amp[DOFS.index("squat")] = rng.uniform(0.2, 0.4)
    n_freq = 2 if n <= 4 else len(FREQS)
    pats = _phase_patterns(-(-n // n_freq), rng)
    fams = []
    for c in range(n):
        fams.append(MotionFamily(
            base=np.zeros(N_DOF),
            amp=amp.copy(),
            phase=pats[c // n_freq].copy(),
            freq=FREQS[c % n_freq],
        ))
    return fams


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 0] = 1
    out[..., 1, 1] = c
    out[..., 1, 2] = -s
    out[..., 2, 1] = s
    out[..., 2, 2] = c
    return out


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 1, 1] = 1
    out[..., 0, 0] = c
    out[..., 0, 2] = s
    out[..., 2, 0] = -s
    out[..., 2, 2] = c
    return out


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 2, 2] = 1
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def _apply(R, v):
    return np.einsum("tij,tj->ti", R, v)


def forward_kinematics(theta: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Joint positions (T, 15, 3) for angles (T, N_DOF). Body frame: +y up, +x left, +z forward."""
    T = theta.shape[0]
    a = dict(zip(DOFS, theta.T))
    one = np.ones(T)

    def vec(x, y, z):
        return np.stack([x * one, y * one, z * one], axis=1) * scale

    root = vec(0.0, 1.0, 0.0) - np.stack([0 * one, 0.25 * np.abs(a["squat"]), 0 * one], axis=1) * scale
    Rt = _ry(a["torso_yaw"]) @ _rx(a["torso_pitch"])
    spine = root + _apply(Rt, vec(0, 0.3, 0))
    neck = root + _apply(Rt, vec(0, 0.55, 0))

    out = {"root": root, "spine": spine, "neck": neck}
    for side, sgn in (("left", 1.0), ("right", -1.0)):
        p = "l" if side == "left" else "r"
        sh = neck + _apply(Rt, vec(sgn * 0.18, -0.05, 0))
        Ra = Rt @ _rx(-a[f"{p}_sh_pitch"]) @ _rz(sgn * a[f"{p}_sh_roll"])
        el = sh + _apply(Ra, vec(0, -0.28, 0))
        hand = el + _apply(Ra @ _rx(-np.abs(a[f"{p}_elbow"])), vec(0, -0.25, 0))
        hip = root + vec(sgn * 0.1, -0.05, 0)
        Rl = _rx(-a[f"{p}_hip_pitch"])
        knee = hip + _apply(Rl, vec(0, -0.42, 0))
        foot = knee + _apply(Rl @ _rx(np.abs(a[f"{p}_knee"])), vec(0, -0.42, 0))
        out.update({f"shoulder_{side}": sh, f"elbow_{side}": el, f"hand_{side}": hand,
                    f"hip_{side}": hip, f"knee_{side}": knee, f"foot_{side}": foot})
    return np.stack([out[n] for n in JOINT_NAMES], axis=1)


def _resize_joints(pos: np.ndarray, J: int) -> np.ndarray:
    base = pos.shape[1]
    if J <= base:
        return pos[:, :J]
    extra = [0.5 * (pos[:, k % base] + pos[:, (k + 1) % base]) for k in range(J - base)]
    return np.concatenate([pos, np.stack(extra, axis=1)], axis=1)


def render_sequence(fam: MotionFamily, T: int, noise: float, rng: np.random.Generator) -> np.ndarray:
    """Body-frame joint positions (T, 15, 3) of one noisy instance of ``fam``."""
    s = np.arange(T) / max(T - 1, 1)
    speed = 1.0 + 0.2 * noise * rng.standard_normal()
    shift = min(noise, 1.0) * rng.uniform(0, 2 * np.pi)
    amp = fam.amp * (1.0 + 0.25 * noise * rng.standard_normal(N_DOF))
    scale = 1.0 + 0.1 * noise * rng.standard_normal()
    arg = 2 * np.pi * fam.freq * speed * s[:, None] + fam.phase + shift
    theta = fam.base + amp * np.sin(arg)
    pos = forward_kinematics(theta, scale=scale)
    if noise > 0:
        pos = pos + 0.02 * noise * rng.standard_normal(pos.shape)
    return pos


def generate_synthetic(spec: SyntheticSpec | None = None, **kwargs) -> Dataset:
    """Labelled synthetic dataset; bitwise deterministic for a given spec."""
    spec = spec or SyntheticSpec(**kwargs)
    spec.validate()
    fams = make_families(spec.classes, spec.family_seed)
    rng = np.random.default_rng(spec.seed)
    n_train = max(1, int(round(spec.train_fraction * spec.per_class)))
    seqs, splits = [], []
    for c, fam in enumerate(fams):
        for k in range(spec.per_class):
            pos = _resize_joints(render_sequence(fam, spec.frames, spec.noise, rng), spec.joints)
            if spec.randomize_camera:
                Q = Rotation.random(random_state=rng).as_matrix()
                b = rng.normal(0.0, 2.0, 3)
                pos = pos @ Q.T + b
            seqs.append(ActionSequence(
                frames=pos, joint_map=dict(JOINT_MAP), label=c, id=f"c{c:02d}_s{k:04d}",
            ))
            splits.append("train" if k < n_train else "test")
    meta = {"synthetic": {k: getattr(spec, k) for k in spec.__dataclass_fields__}}
    return Dataset(seqs, splits, meta=meta)
