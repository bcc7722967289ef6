import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from predict_cluster.skeleton import (
    ActionSequence,
    Dataset,
    DegeneratePoseError,
    NormStats,
    SequenceError,
    apply_view_invariant,
    compute_basis,
    flatten,
    load_processed,
    load_sequence,
    normalize,
    preprocess,
    resample,
    save_processed,
    unflatten,
)

from conftest import JM, random_skeleton


def _write(tmp_path, d, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return p


def _doc(T=2, J=5):
    return {
        "id": "a", "label": 3, "subject": None, "view": 1, "num_joints": J,
        "joint_map": JM,
        "frames": np.arange(T * J * 3, dtype=float).reshape(T, J, 3).tolist(),
    }


# ---------------------------------------------------------------- loading


def test_load_json_round_trip_shape(tmp_path):
    seq = load_sequence(_write(tmp_path, _doc()), "json")
    assert seq.num_frames == 2 and seq.num_joints == 5
    assert seq.label == 3 and seq.view == 1 and seq.subject is None
    np.testing.assert_array_equal(seq.frames[1, 0], [15, 16, 17])


def test_load_rejects_nan(tmp_path):
    d = _doc()
    d["frames"][1][2][0] = float("nan")
    p = tmp_path / "nan.json"
    p.write_text(json.dumps(d))  # json emits NaN literal
    with pytest.raises(SequenceError, match=r"non-finite coordinate at \(1, 2, 0\)"):
        load_sequence(p)


def test_load_rejects_empty(tmp_path):
    d = _doc()
    d["frames"] = []
    with pytest.raises(SequenceError, match="empty sequence"):
        load_sequence(_write(tmp_path, d))


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(SequenceError):
        load_sequence(p)


def test_load_requires_joint_map(tmp_path):
    d = _doc()
    del d["joint_map"]
    with pytest.raises(SequenceError):
        load_sequence(_write(tmp_path, d))


def test_load_csv(tmp_path):
    lines = ["# id: c1", "# label: 2", f"# num_joints: 4", f"# joint_map: {json.dumps(JM)}",
             "frame,joint,x,y,z"]
    for t in range(3):
        for j in range(4):
            lines.append(f"{t},{j},{t},{j},{t + j}")
    p = tmp_path / "s.csv"
    p.write_text("\n".join(lines) + "\n")
    seq = load_sequence(p)
    assert seq.frames.shape == (3, 4, 3) and seq.label == 2 and seq.id == "c1"
    np.testing.assert_array_equal(seq.frames[2, 3], [2, 3, 5])


def test_joint_map_validation():
    with pytest.raises(SequenceError):
        ActionSequence(np.zeros((1, 3, 3)), joint_map=dict(JM))  # index 3 out of range
    with pytest.raises(SequenceError):
        ActionSequence(np.zeros((1, 4, 3)), joint_map={"root": 0, "spine": 0, "hip_left": 1, "hip_right": 2})


# ---------------------------------------------------------------- basis


def _canonical_pose():
    f = np.zeros((1, 4, 3))
    f[0, 1] = [0, 1, 0]
    f[0, 2] = [-1, 0, 0]
    f[0, 3] = [1, 0, 0]
    return ActionSequence(f, joint_map=dict(JM))


def test_basis_hand_example():
    b = compute_basis(_canonical_pose())
    # columns: v1/|v1| = (0,1,0); v2_hat = (-1,0,0); v1 x v2_hat = (0,0,1)
    expected = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1]], dtype=float)
    np.testing.assert_allclose(b.R, expected, atol=1e-15)
    np.testing.assert_array_equal(b.d_R, [0, 0, 0])
    assert np.linalg.det(b.R) == pytest.approx(1.0, abs=1e-12)


def test_basis_degenerate_spine():
    seq = _canonical_pose()
    f = seq.frames.copy()
    f[0, 1] = f[0, 0]
    with pytest.raises(DegeneratePoseError):
        compute_basis(seq.with_frames(f))


def test_basis_degenerate_hips_parallel_to_spine():
    seq = _canonical_pose()
    f = seq.frames.copy()
    f[0, 2] = [0, 2, 0]
    f[0, 3] = [0, -1, 0]
    with pytest.raises(DegeneratePoseError):
        compute_basis(seq.with_frames(f))


def test_basis_orthonormal_random(rng):
    for _ in range(50):
        b = compute_basis(random_skeleton(rng))
        assert np.abs(b.R.T @ b.R - np.eye(3)).max() <= 1e-10
        assert abs(np.linalg.det(b.R) - 1) <= 1e-10


def test_basis_origin_is_frame0_root(rng):
    seq = random_skeleton(rng)
    np.testing.assert_array_equal(compute_basis(seq).d_R, seq.frames[0, 0])


# ---------------------------------------------------------------- view invariance


def test_frame0_root_maps_to_origin(rng):
    seq = random_skeleton(rng)
    out = apply_view_invariant(seq, compute_basis(seq))
    np.testing.assert_array_equal(out.frames[0, 0], [0.0, 0.0, 0.0])


def test_identity_basis_is_noop(rng):
    from predict_cluster.skeleton import ViewInvariantBasis

    seq = random_skeleton(rng)
    out = apply_view_invariant(seq, ViewInvariantBasis(np.eye(3), np.zeros(3)))
    np.testing.assert_array_equal(out.frames, seq.frames)


def test_transform_is_idempotent(rng):
    seq = random_skeleton(rng)
    once = apply_view_invariant(seq, compute_basis(seq))
    b2 = compute_basis(once)
    np.testing.assert_allclose(b2.R, np.eye(3), atol=1e-12)
    twice = apply_view_invariant(once, b2)
    np.testing.assert_allclose(twice.frames, once.frames, atol=1e-12)


def _pairwise(f):
    return np.linalg.norm(f[:, :, None] - f[:, None, :], axis=-1)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-50, 50))
def test_rigid_motion_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    seq = random_skeleton(rng, T=4, J=6)
    Q = Rotation.random(random_state=rng).as_matrix()
    b = rng.normal(size=3) * shift
    moved = seq.with_frames(seq.frames @ Q.T + b)
    a = apply_view_invariant(seq, compute_basis(seq)).frames
    c = apply_view_invariant(moved, compute_basis(moved)).frames
    assert np.abs(a - c).max() <= 1e-9
    assert np.abs(_pairwise(a) - _pairwise(seq.frames)).max() <= 1e-9


# ---------------------------------------------------------------- resample


def test_resample_downsample_indices():
    T = 100
    f = np.arange(T, dtype=float)[:, None, None] * np.ones((T, 4, 3))
    seq = ActionSequence(f, joint_map=dict(JM))
    out, mask = resample(seq, 50)
    # oracle: round-half-up of i*99/49 with exact fractions
    from fractions import Fraction
    idx = [int(Fraction(i * 99, 49) + Fraction(1, 2)) for i in range(50)]
    np.testing.assert_array_equal(out.frames[:, 0, 0], idx)
    assert idx[0] == 0 and idx[-1] == 99
    assert mask.all()


def test_resample_identity_at_t_max(rng):
    seq = random_skeleton(rng, T=50)
    out, mask = resample(seq, 50)
    np.testing.assert_array_equal(out.frames, seq.frames)
    assert mask.all()


def test_resample_pads_short(rng):
    seq = random_skeleton(rng, T=3)
    out, mask = resample(seq, 50)
    assert out.num_frames == 50
    np.testing.assert_array_equal(out.frames[:3], seq.frames)
    assert not out.frames[3:].any()
    assert mask.tolist() == [True] * 3 + [False] * 47


@given(T=st.integers(1, 200), t_max=st.integers(1, 80))
def test_resample_shape_and_purity(T, t_max):
    f = np.arange(T * 12, dtype=float).reshape(T, 4, 3)
    seq = ActionSequence(f, joint_map=dict(JM))
    a, ma = resample(seq, t_max)
    b, mb = resample(seq, t_max)
    assert a.num_frames == t_max
    np.testing.assert_array_equal(a.frames, b.frames)
    np.testing.assert_array_equal(ma, mb)
    assert ma.sum() == min(T, t_max)


# ---------------------------------------------------------------- normalize


def _dataset(values_train, values_test=None):
    seqs, splits = [], []
    for v, sp in [(values_train, "train")] + ([(values_test, "test")] if values_test is not None else []):
        seqs.append(ActionSequence(np.asarray(v, dtype=float).reshape(-1, 4, 3), joint_map=dict(JM)))
        splits.append(sp)
    return Dataset(seqs, splits)


def test_normalize_endpoints():
    vals = np.linspace(-3.0, 7.0, 24)
    ds, stats = normalize(_dataset(vals))
    out = ds.sequences[0].frames.ravel()
    assert out.min() == -1.0 and out.max() == 1.0
    assert float(stats.lo) == -3.0 and float(stats.hi) == 7.0


def test_normalize_identity_on_unit_range():
    vals = np.linspace(-1.0, 1.0, 24)
    ds, _ = normalize(_dataset(vals))
    np.testing.assert_allclose(ds.sequences[0].frames.ravel(), vals, atol=1e-15)


def test_normalize_test_value_above_train_max_not_clamped():
    train = np.linspace(0.0, 2.0, 12)
    test = np.full(12, 3.0)
    ds, stats = normalize(_dataset(train, test))
    # affine oracle: 2 * (3 - 0) / (2 - 0) - 1 = 2
    np.testing.assert_allclose(ds.sequences[1].frames, 2.0)


def test_normalize_uses_train_only():
    ds, stats = normalize(_dataset(np.linspace(0, 1, 12), np.linspace(-10, 10, 12)))
    assert float(stats.lo) == 0.0 and float(stats.hi) == 1.0


def test_normalize_constant_errors():
    with pytest.raises(ValueError):
        normalize(_dataset(np.ones(12)))


def test_normalize_respects_mask(rng):
    seq = random_skeleton(rng, T=3)
    seq = seq.with_frames(seq.frames * 5)
    padded, mask = resample(seq, 8)
    ds = Dataset([padded], ["train"], masks=[mask])
    out, _ = normalize(ds)
    f = out.sequences[0].frames
    assert np.all(np.abs(f[mask]) <= 1 + 1e-12)
    assert not f[~mask].any()


def test_normstats_json_round_trip():
    s = NormStats(np.asarray(-2.0), np.asarray(3.0))
    s2 = NormStats.from_dict(json.loads(json.dumps(s.to_dict())))
    assert float(s2.lo) == -2.0 and float(s2.hi) == 3.0


# ---------------------------------------------------------------- flatten


def test_flatten_layout():
    seq = ActionSequence(np.array([[[1, 2, 3], [4, 5, 6]]], dtype=float))
    np.testing.assert_array_equal(flatten(seq), [[1, 2, 3, 4, 5, 6]])


def test_flatten_round_trip_and_shape(rng):
    f = rng.normal(size=(50, 25, 3))
    seq = ActionSequence(f)
    X = flatten(seq)
    assert X.shape == (50, 75)
    np.testing.assert_array_equal(unflatten(X, 25), f)


# ---------------------------------------------------------------- pipeline


def test_preprocess_skips_degenerate_and_archives(tmp_path, rng):
    good = [random_skeleton(rng, T=70) for _ in range(3)]
    bad_f = random_skeleton(rng, T=10).frames.copy()
    bad_f[0, 1] = bad_f[0, 0]
    bad = ActionSequence(bad_f, joint_map=dict(JM), id="bad")
    seqs = [ActionSequence(g.frames, joint_map=dict(JM), label=i, id=f"g{i}") for i, g in enumerate(good)]
    ds = Dataset(seqs + [bad], ["train", "train", "test", "train"])
    out, stats, skipped = preprocess(ds, t_max=50)
    assert skipped == ["bad"] and len(out) == 3
    assert all(s.num_frames == 50 for s in out.sequences)
    save_processed(out, tmp_path / "p.npz")
    back = load_processed(tmp_path / "p.npz")
    assert back.ids() == ["g0", "g1", "g2"] and back.splits == ["train", "train", "test"]
    for a, b in zip(out.sequences, back.sequences):
        np.testing.assert_array_equal(a.frames, b.frames)
