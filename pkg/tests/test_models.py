import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles as O
from genbound.data import Example
from genbound.errors import InvalidArgument, UnsupportedModel
from genbound.models import (LinearNet, MlpClassifier, TwoLayerReLU, activation_fraction,
                             analytic_hessian_trace, batch_grad, load_checkpoint, loss, model_from_spec,
                             per_example_grad, save_checkpoint)
from genbound.numerics import SeededStream, central_diff_gradient


def unit(v):
    return v / np.linalg.norm(v)


def test_linear_prediction_is_inner_product():
    m = LinearNet(3)
    w = np.array([1.0, -2.0, 0.5])
    x = np.array([0.3, 0.1, -4.0])
    assert m.predict(w, x[None, :])[0] == pytest.approx(float(w @ x), abs=0)


def test_linear_loss_and_grad_match_loop_oracle():
    s = SeededStream(1)
    m = LinearNet(5)
    for _ in range(20):
        w, x, y = s.normal(5), s.normal(5), float(s.normal(1)[0])
        ref_loss, ref_grad = O.linear_loss_grad(w, x, y)
        z = Example(x, y)
        assert loss(m, w, z) == pytest.approx(ref_loss, rel=1e-13)
        assert np.allclose(per_example_grad(m, w, z), ref_grad, rtol=1e-13, atol=1e-15)


def test_relu_loss_and_grad_match_loop_oracle():
    s = SeededStream(2)
    m = TwoLayerReLU(4, 6, sign_seed=3)
    for _ in range(20):
        w, x, y = s.normal(m.dim), unit(s.normal(4)), float(s.normal(1)[0])
        ref_loss, ref_grad, active = O.relu_loss_grad(w, list(m.signs), 4, x, y)
        z = Example(x, y)
        assert loss(m, w, z) == pytest.approx(ref_loss, rel=1e-12)
        assert np.allclose(per_example_grad(m, w, z), ref_grad, rtol=1e-12, atol=1e-15)
        assert analytic_hessian_trace(m, w, z) == pytest.approx(active / 6, rel=1e-14)


def test_relu_indicator_active_at_zero():
    m = TwoLayerReLU(2, 2, sign_seed=0)
    w = np.array([1.0, 0.0, -1.0, 0.0])
    x = np.array([0.0, 1.0])
    assert np.array_equal(m.indicators(w, x[None, :])[0], [1.0, 1.0])


def test_relu_half_active_trace():
    m = TwoLayerReLU(2, 4, sign_seed=0)
    x = np.array([1.0, 0.0])
    w = np.array([1, 0, 2, 0, -1, 0, -3, 0], dtype=float)
    assert analytic_hessian_trace(m, w, Example(x, 0.0)) == 0.5


def test_linear_trace_is_squared_norm():
    m = LinearNet(2)
    assert analytic_hessian_trace(m, np.zeros(2), Example(np.array([0.6, 0.8]), 0.0)) == pytest.approx(1.0)


def test_mlp_trace_unsupported():
    m = MlpClassifier([3, 4, 2])
    with pytest.raises(UnsupportedModel):
        analytic_hessian_trace(m, np.zeros(m.dim), Example(np.zeros(3), 0))
    with pytest.raises(UnsupportedModel):
        activation_fraction(m, np.zeros(m.dim), [Example(np.zeros(3), 0)])


def test_input_dimension_checked():
    with pytest.raises(InvalidArgument):
        loss(LinearNet(3), np.zeros(3), Example(np.zeros(4), 0.0))
    with pytest.raises(InvalidArgument):
        batch_grad(LinearNet(3), np.zeros(3), [])


@pytest.mark.parametrize("model", [LinearNet(4), TwoLayerReLU(4, 5, sign_seed=1), MlpClassifier([4, 6, 5, 3])])
def test_batch_grad_is_mean_of_per_example(model):
    s = SeededStream(4)
    w = model.init_weights(s)
    X = s.normal((9, 4))
    y = s.integers(3, size=9) if model.task == "classification" else s.normal(9)
    G = model.per_example_grads(w, X, y)
    assert np.allclose(G.mean(axis=0), model.batch_grad(w, X, y), rtol=1e-12, atol=1e-14)


def test_mlp_gradient_against_central_differences():
    m = MlpClassifier([5, 7, 4])
    s = SeededStream(8)
    w = m.init_weights(s) + 0.1 * s.normal(m.dim)
    X, y = s.normal((6, 5)), s.integers(4, size=6)
    fd = central_diff_gradient(lambda v: float(m.losses(v, X, y).mean()), w, 1e-6)
    g = m.batch_grad(w, X, y)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6


@given(st.integers(0, 2**32))
@settings(max_examples=30, deadline=None)
def test_softmax_outputs_are_distributions(seed):
    m = MlpClassifier([3, 4, 5])
    s = SeededStream(seed)
    w = 5.0 * s.normal(m.dim)
    P = m.probabilities(w, s.normal((4, 3)) * 10)
    assert np.all(P >= 0)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_mlp_weight_layout():
    m = MlpClassifier([2, 3, 2])
    w = np.arange(m.dim, dtype=float)
    (W1, b1), (W2, b2) = m.unflatten(w)
    assert W1.shape == (3, 2) and b1.shape == (3,) and W2.shape == (2, 3)
    assert W1[0, 1] == 1.0 and b1[0] == 6.0 and W2[0, 0] == 9.0


def test_mlp_he_init_scale():
    m = MlpClassifier([400, 300, 10])
    w = m.init_weights(SeededStream(0))
    (W1, b1), _ = m.unflatten(w)
    assert abs(W1.std() - math.sqrt(2 / 400)) < 0.002
    assert np.all(b1 == 0)


def test_relu_hvp_matches_fd_away_from_kinks():
    m = TwoLayerReLU(3, 4, sign_seed=2)
    s = SeededStream(3)
    w = s.normal(m.dim)
    X = np.array([unit(s.normal(3)) for _ in range(5)])
    y = s.normal(5)
    v = s.normal(m.dim)
    eps = 1e-7
    fd = (m.batch_grad(w + eps * v, X, y) - m.batch_grad(w - eps * v, X, y)) / (2 * eps)
    assert np.allclose(m.hvp(w, X, y, v), fd, atol=1e-7)


@pytest.mark.parametrize("model", [LinearNet(3), TwoLayerReLU(3, 4, sign_seed=9, init_std=0.5),
                                   MlpClassifier([3, 5, 2])])
def test_checkpoint_round_trip(tmp_path, model):
    w = model.init_weights(SeededStream(1))
    path = tmp_path / "w.ckpt"
    save_checkpoint(path, model, w, step=7)
    m2, w2, header = load_checkpoint(path)
    assert np.array_equal(w, w2) and header["step"] == 7
    assert m2.spec() == model.spec()
    if isinstance(model, TwoLayerReLU):
        assert np.array_equal(m2.signs, model.signs)


def test_checkpoint_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(InvalidArgument):
        load_checkpoint(p)


def test_model_from_spec_unknown_kind():
    with pytest.raises(InvalidArgument):
        model_from_spec({"kind": "cnn"})
