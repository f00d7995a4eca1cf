import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraudseq.nets import (BiLstmModel, TrainConfig, backward, forward, gradient_check, init_model, loss,
                           relative_error, train)
from fraudseq.optim import AdamState, adam_step
from fraudseq.sequencing import SequenceDataset, Triplet
from conftest import gradcheck_instance


def _zero(model):
    for v in model.params.values():
        v[...] = 0.0
    return model


def _toy_dataset(n=400, triplet=Triplet(2, 1), seed=0):
    # label is the sign of the target's first feature
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, triplet.length, 3))
    y = (X[:, triplet.target_index, 0] > 0).astype(np.int64)
    z = np.zeros(n, np.int64)
    return SequenceDataset(triplet, X, y, np.arange(n), np.arange(n), z)


def test_zero_network_outputs_half():
    model = _zero(init_model(Triplet(2, 1), 3, 4, 5))
    X = np.random.default_rng(0).normal(size=(6, 4, 3)) * 100
    probs, _ = forward(model, X)
    assert np.array_equal(probs, np.full((6, 2), 0.5))


def test_probabilities_valid():
    model = init_model(Triplet(3, 2), 3, 6, 4, seed=2)
    probs, _ = forward(model, np.random.default_rng(1).normal(size=(20, 6, 3)))
    assert np.all((probs > 0) & (probs < 1))
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-15)


def test_loss_examples():
    assert loss(np.full((5, 2), 0.5), [0, 1, 1, 0, 1]) == pytest.approx(math.log(2), abs=1e-15)
    assert loss(np.array([[0.0, 1.0], [1.0, 0.0]]), [1, 0]) <= 1e-6


@settings(max_examples=50)
@given(st.integers(1, 20), st.integers(0, 2**31))
def test_loss_matches_direct_mean(n, seed):
    rng = np.random.default_rng(seed)
    p1 = rng.uniform(0.001, 0.999, n)
    y = rng.integers(0, 2, n)
    probs = np.stack([1 - p1, p1], axis=1)
    direct = sum(-math.log(probs[k, y[k]]) for k in range(n)) / n
    assert loss(probs, y) == pytest.approx(direct, rel=1e-12)


def test_shape_errors_name_the_dimension():
    model = init_model(Triplet(2, 1), 3, 4, 4)
    with pytest.raises(ValueError, match="window length"):
        forward(model, np.zeros((2, 5, 3)))
    with pytest.raises(ValueError, match="feature dimension"):
        forward(model, np.zeros((2, 4, 7)))


def test_lstm_rejects_future_context():
    with pytest.raises(ValueError):
        init_model(Triplet(2, 1), 3, 4, 4, bidirectional=False)


@pytest.mark.parametrize("seed", range(6))
def test_gradient_check_bilstm(seed):
    model, X, y = gradcheck_instance(seed)
    errs = gradient_check(model, X, y)
    assert max(errs.values()) < 1e-4, errs


@pytest.mark.parametrize("seed", range(4))
def test_gradient_check_lstm(seed):
    model, X, y = gradcheck_instance(100 + seed, bidirectional=False)
    assert max(gradient_check(model, X, y).values()) < 1e-4


def test_gradient_check_with_dropout_mask():
    model, X, y = gradcheck_instance(7)
    model.dropout = 0.5
    from fraudseq.nets import dropout_masks
    masks = dropout_masks(model, len(X), np.random.default_rng(0))
    assert max(gradient_check(model, X, y, masks=masks).values()) < 1e-4


def test_backward_direction_gets_gradient():
    model, X, y = gradcheck_instance(3)
    _, cache = forward(model, X)
    g = backward(model, cache, y)
    assert np.abs(g["bw.W"]).max() > 0 and np.abs(g["head.W1b"]).max() > 0


def test_saturated_batch_has_zero_gradient():
    model = init_model(Triplet(1, 1), 2, 3, 3, seed=0)
    model.params["head.b2"][:] = [0.0, 40.0]
    _, cache = forward(model, np.ones((3, 3, 2)))
    g = backward(model, cache, np.ones(3, np.int64))
    assert all(np.linalg.norm(v) < 1e-12 for v in g.values())


def test_relative_error_floor():
    assert relative_error(np.array([0.0]), np.array([1e-9])) == pytest.approx(1e-3)


def test_every_position_reaches_bilstm_output():
    model = init_model(Triplet(2, 2), 3, 5, 4, seed=4)
    X = np.random.default_rng(5).normal(size=(1, 5, 3))
    base = forward(model, X)[0]
    for pos in range(5):
        Y = X.copy()
        Y[0, pos] += 1.0
        assert not np.array_equal(forward(model, Y)[0], base), pos


def test_zeroed_backward_path_equals_lstm():
    bi = init_model(Triplet(3, 2), 3, 5, 4, bidirectional=True, seed=9)
    uni = init_model(Triplet(3, 0), 3, 5, 4, bidirectional=False, seed=1)
    for k in ("fw.W", "fw.b", "head.W1f", "head.b1", "head.W2", "head.b2"):
        uni.params[k] = bi.params[k].copy()
    for k in ("bw.W", "bw.b", "head.W1b"):
        bi.params[k][...] = 0.0
    X = np.random.default_rng(2).normal(size=(10, 6, 3))
    assert np.array_equal(forward(bi, X)[0], forward(uni, X[:, :4])[0])


def test_dropout_zero_train_equals_eval():
    model = init_model(Triplet(2, 1), 3, 4, 4, dropout=0.0, seed=1)
    X = np.random.default_rng(0).normal(size=(5, 4, 3))
    assert np.array_equal(forward(model, X, True, np.random.default_rng(3))[0], forward(model, X)[0])


def test_dropout_only_in_train_mode():
    model = init_model(Triplet(2, 1), 3, 8, 4, dropout=0.5, seed=1)
    X = np.random.default_rng(0).normal(size=(5, 4, 3))
    assert np.array_equal(forward(model, X)[0], forward(model, X)[0])
    assert not np.array_equal(forward(model, X, True, np.random.default_rng(3))[0], forward(model, X)[0])


def test_adam_first_step_magnitude():
    params = {"w": np.zeros(4)}
    g = {"w": np.array([3.0, -0.01, 200.0, -7.0])}
    adam_step(params, g, AdamState.zeros_like(params), lr=0.1)
    assert np.allclose(params["w"], -0.1 * np.sign(g["w"]), rtol=1e-5)


def test_adam_zero_gradient_is_noop():
    params = {"w": np.array([1.0, -2.0])}
    state = AdamState.zeros_like(params)
    for _ in range(10):
        adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
    assert np.array_equal(params["w"], [1.0, -2.0])


def test_adam_quadratic_descends():
    A = np.diag([1.0, 4.0, 0.25])
    params = {"w": np.array([3.0, -2.0, 5.0])}
    state = AdamState.zeros_like(params)
    f = lambda w: 0.5 * w @ A @ w
    vals = [f(params["w"])]
    for _ in range(100):
        adam_step(params, {"w": A @ params["w"]}, state, lr=0.01)
        vals.append(f(params["w"]))
    assert sum(b < a for a, b in zip(vals, vals[1:])) >= 95


def test_training_fits_separable_toy():
    model, hist = train(_toy_dataset(), TrainConfig(hidden=8, head=8, dropout=0.0, epochs=8, lr=0.02,
                                                     batch_size=32))
    assert hist[-1] < 0.05


def test_training_is_deterministic():
    cfg = TrainConfig(hidden=4, head=4, dropout=0.3, epochs=2, batch_size=50, seed=3)
    a, ha = train(_toy_dataset(200), cfg)
    b, hb = train(_toy_dataset(200), cfg)
    assert ha == hb
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_zero_epochs_returns_init():
    ds = _toy_dataset(50)
    cfg = TrainConfig(hidden=4, head=3, epochs=0, seed=8)
    model, hist = train(ds, cfg)
    ref = init_model(ds.triplet, 3, 4, 3, cfg.dropout, seed=8)
    assert hist == [] and all(np.array_equal(model.params[k], ref.params[k]) for k in ref.params)


def test_nan_loss_aborts_with_guidance():
    ds = _toy_dataset(50)
    ds.X[0, 0, 0] = np.nan
    with pytest.raises(FloatingPointError, match="learning rate"):
        train(ds, TrainConfig(hidden=3, head=3, epochs=1, batch_size=50))


def test_empty_dataset_rejected():
    ds = _toy_dataset(5).subset(np.zeros(5, bool))
    with pytest.raises(ValueError):
        train(ds, TrainConfig())


def test_save_load_round_trip(tmp_path):
    model, _ = train(_toy_dataset(100), TrainConfig(hidden=4, head=4, epochs=1, batch_size=50))
    model.save(tmp_path / "m.ckpt")
    again = BiLstmModel.load(tmp_path / "m.ckpt")
    X = _toy_dataset(10, seed=4).X
    assert np.array_equal(again.predict_proba(X), model.predict_proba(X))
    assert again.config == model.config and again.bidirectional
