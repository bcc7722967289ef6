import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predict_cluster.losses import loss_and_grad, reconstruction_loss
from predict_cluster.model import DivergenceError, ModelDims, init_params
from predict_cluster.skeleton import preprocess
from predict_cluster.synthetic import generate_synthetic
from predict_cluster.trainer import (
    AdamState,
    TrainConfig,
    TrainLog,
    adam_update,
    clip_gradients,
    global_norm,
    hyperparam_search,
    lr_schedule,
    train,
)


@pytest.fixture(scope="module")
def tiny_data():
    ds = generate_synthetic(classes=2, per_class=6, frames=10, joints=5, noise=0.3, seed=1)
    return preprocess(ds, t_max=8)[0]


# ---------------------------------------------------------------- losses


def test_mse_example():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    Y = np.array([[2.0, 4.0], [3.0, 4.0]])
    # frame errors 2.5 and 0, one valid frame each sequence style
    assert reconstruction_loss(X, Y, np.array([1, 0]), "mse") == pytest.approx(2.5)
    assert reconstruction_loss(X, Y, np.array([1, 1]), "mse") == pytest.approx(1.25)


def test_mae_example():
    X = np.array([[1.0, 2.0]])
    Y = np.array([[2.0, 4.0]])
    assert reconstruction_loss(X, Y, None, "mae") == pytest.approx(1.5)


def test_loss_exact_reconstruction_zero(rng):
    X = rng.normal(size=(3, 5, 4))
    for kind in ("mse", "mae"):
        loss, g = loss_and_grad(X, X.copy(), None, kind)
        assert loss == 0.0
        assert not g.any()


def test_loss_all_masked_raises():
    with pytest.raises(ValueError):
        reconstruction_loss(np.zeros((3, 2)), np.ones((3, 2)), np.zeros(3))


def test_loss_unknown_kind():
    with pytest.raises(ValueError):
        reconstruction_loss(np.zeros((3, 2)), np.ones((3, 2)), None, "huber")


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), kind=st.sampled_from(["mse", "mae"]))
def test_loss_nonnegative_and_mask_ignores_padding(seed, kind):
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    mask = np.array([1, 1, 1, 0, 0, 0])
    base = reconstruction_loss(X, Y, mask, kind)
    Y2 = Y.copy()
    Y2[3:] = rng.normal(size=(3, 3)) * 100
    assert base >= 0
    assert reconstruction_loss(X, Y2, mask, kind) == base


# ---------------------------------------------------------------- schedule, clipping, Adam


@pytest.mark.parametrize("step,expected", [(0, 1e-4), (999, 1e-4), (1000, 9.5e-5), (2000, 9.025e-5)])
def test_lr_schedule(step, expected):
    assert lr_schedule(step, TrainConfig()) == pytest.approx(expected, rel=1e-12)


def test_clip_example():
    g, norm = clip_gradients({"a": np.array([30.0, 40.0])}, 25)
    assert norm == pytest.approx(50.0)
    np.testing.assert_allclose(g["a"], [15.0, 20.0])


def test_clip_below_threshold_unchanged():
    src = {"a": np.array([3.0, 4.0]), "b": np.array([[1.0]])}
    g, _ = clip_gradients(src, 25)
    for k in src:
        np.testing.assert_array_equal(g[k], src[k])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.floats(1e-3, 1e4), max_norm=st.floats(0.1, 100))
def test_clip_is_global_and_bounded(seed, scale, max_norm):
    rng = np.random.default_rng(seed)
    g = {"a": rng.normal(size=(3, 4)) * scale, "b": rng.normal(size=5) * scale}
    out, norm = clip_gradients(g, max_norm)
    assert global_norm(out) <= max_norm * (1 + 1e-12) + 1e-12
    if norm > max_norm:
        ratio = out["a"].ravel()[0] / g["a"].ravel()[0]
        np.testing.assert_allclose(out["b"], g["b"] * ratio, rtol=1e-12)


def test_adam_first_step():
    p = {"w": np.array([1.0, -2.0])}
    g = {"w": np.array([0.5, -3.0])}
    new, st_ = adam_update(p, g, AdamState.zeros(p), lr=0.1)
    # bias-corrected first step moves each coordinate by lr against its gradient sign
    np.testing.assert_allclose(new["w"] - p["w"], [-0.1, 0.1], rtol=1e-6)
    assert st_.step == 1


def test_adam_respects_trainable():
    p = {"w": np.ones(2), "frozen": np.ones(2)}
    g = {"w": np.ones(2), "frozen": np.ones(2)}
    new, _ = adam_update(p, g, AdamState.zeros(p), 0.1, trainable={"w"})
    np.testing.assert_array_equal(new["frozen"], p["frozen"])
    assert not np.array_equal(new["w"], p["w"])


def test_adam_divergence():
    p = {"w": np.ones(2)}
    with pytest.raises(DivergenceError):
        adam_update(p, {"w": np.array([np.nan, 1.0])}, AdamState.zeros(p), 0.1)


# ---------------------------------------------------------------- config and log


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(loss="l3")
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 1})
    c = TrainConfig(lr=1e-3, iterations=5)
    assert TrainConfig.from_dict(c.to_dict()) == c


def test_trainlog_csv_without_timing():
    log = TrainLog([0, 1], [0.5, 0.25], [1e-4, 1e-4], [0.1, 0.2], [1], [0.75])
    text = log.to_csv(timing=False)
    assert text.splitlines() == ["iteration,loss,lr,accuracy,seconds",
                                 "0,0.5,0.0001,,", "1,0.25,0.0001,0.75,"]


# ---------------------------------------------------------------- training loop


def test_fw_decoder_frozen(tiny_data):
    X, _ = tiny_data.arrays()
    m = init_params(ModelDims(input_dim=X.shape[2], hidden=6), 0)
    trained, log = train(m, tiny_data, TrainConfig(iterations=10, lr=1e-2, batch_size=4))
    assert len(log.loss) == 10
    changed = False
    for k, v in m.params.items():
        if k.startswith("dec."):
            assert np.array_equal(trained.params[k], v), k
        else:
            changed |= not np.array_equal(trained.params[k], v)
    assert changed


def test_fs_decoder_trains(tiny_data):
    X, _ = tiny_data.arrays()
    m = init_params(ModelDims(input_dim=X.shape[2], hidden=6, strategy="FS"), 0)
    trained, _ = train(m, tiny_data, TrainConfig(iterations=3, lr=1e-2, batch_size=4))
    assert not np.array_equal(trained.params["dec.Wy"], m.params["dec.Wy"])


def test_training_deterministic(tiny_data):
    X, _ = tiny_data.arrays()
    m = init_params(ModelDims(input_dim=X.shape[2], hidden=5), 2)
    cfg = TrainConfig(iterations=6, lr=1e-3, batch_size=5, eval_every=3, seed=9)
    a, la = train(m, tiny_data, cfg)
    b, lb = train(m, tiny_data, cfg)
    assert la.loss == lb.loss and la.accuracy == lb.accuracy
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert la.to_csv(timing=False) == lb.to_csv(timing=False)


def test_training_leaves_input_model_untouched(tiny_data):
    X, _ = tiny_data.arrays()
    m = init_params(ModelDims(input_dim=X.shape[2], hidden=5), 2)
    before = {k: v.copy() for k, v in m.params.items()}
    train(m, tiny_data, TrainConfig(iterations=2, lr=1e-2))
    for k in before:
        np.testing.assert_array_equal(m.params[k], before[k])


def test_zero_iterations(tiny_data):
    X, _ = tiny_data.arrays()
    m = init_params(ModelDims(input_dim=X.shape[2], hidden=5), 2)
    trained, log = train(m, tiny_data, TrainConfig(iterations=0))
    assert log.loss == []
    for k in m.params:
        np.testing.assert_array_equal(trained.params[k], m.params[k])


def test_train_dim_mismatch(tiny_data):
    m = init_params(ModelDims(input_dim=7, hidden=5), 2)
    with pytest.raises(ValueError):
        train(m, tiny_data, TrainConfig(iterations=1))


def test_eval_interval(tiny_data):
    X, _ = tiny_data.arrays()
    m = init_params(ModelDims(input_dim=X.shape[2], hidden=4), 0)
    _, log = train(m, tiny_data, TrainConfig(iterations=7, eval_every=3))
    assert log.eval_iteration == [2, 5, 6]
    assert all(0 <= a <= 1 for a in log.accuracy)


def test_learning_rate_logged_with_decay(tiny_data):
    X, _ = tiny_data.arrays()
    m = init_params(ModelDims(input_dim=X.shape[2], hidden=4), 0)
    _, log = train(m, tiny_data, TrainConfig(iterations=5, lr=1e-3, decay=0.5, decay_every=2))
    assert log.lr == [1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4]


def test_hpsearch_ordering(tiny_data):
    space = [{"hidden": 3}, {"hidden": 6}, {"hidden": 3, "layers": 1}]
    res = hyperparam_search(space, tiny_data, seed=0)
    assert len(res) == 3
    keys = [(-r["accuracy"], r["num_params"]) for r in res]
    assert keys == sorted(keys)
    assert {tuple(sorted(r["config"].items())) for r in res} == {tuple(sorted(c.items())) for c in space}
    assert hyperparam_search(space, tiny_data, seed=0) == res
