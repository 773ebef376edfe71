import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmmppi.mppi import make_rng
from dmmppi.predictor import (MAGIC, ModelFormatError, PredictorModel, TrainConfig, backward, forward,
                              load, r_squared, save, train)
from dmmppi.vehicle import DomainError


def zero_model(dims=(4, 64, 64, 1)):
    dims = list(dims)
    return PredictorModel(dims, [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
                          [np.zeros(b) for b in dims[1:]], np.zeros(dims[0]), np.ones(dims[0]))


def test_forward_zero_model():
    assert forward(zero_model(), [1.0, 2.0, 3.0, 4.0]) == 0.0


def test_forward_output_bias_only():
    m = zero_model()
    m.biases[-1][:] = 0.7
    assert forward(m, [5.0, -1.0, 0.0, 2.0]) == pytest.approx(0.7)


def test_forward_rejects_wrong_width():
    with pytest.raises(DomainError):
        forward(zero_model(), [1.0, 2.0, 3.0])


def test_forward_applies_normalization():
    m = PredictorModel([1, 1], [np.array([[2.0]])], [np.array([0.5])], [1.0], [4.0], y_mean=3.0, y_std=10.0)
    # z = (9 - 1) / 4 = 2, out = (2 * 2 + 0.5) * 10 + 3
    assert forward(m, [9.0]) == pytest.approx(48.0)


def test_backward_zero_model_examples():
    m = zero_model()
    loss, grads = backward(m, np.zeros((1, 4)), [0.0])
    assert loss == 0.0
    assert all(np.all(g == 0) for g in grads)
    loss, grads = backward(m, np.zeros((1, 4)), [1.0])
    assert loss == 1.0
    assert grads[-1][0] == pytest.approx(-2.0)


def test_backward_duplicate_batch():
    m = PredictorModel.init([4, 8, 8, 1], make_rng(0))
    x = make_rng(1).normal(size=(5, 4))
    y = make_rng(2).normal(size=5)
    l1, g1 = backward(m, x, y)
    l2, g2 = backward(m, np.vstack([x, x]), np.concatenate([y, y]))
    assert l1 == pytest.approx(l2, rel=1e-12)
    for a, b in zip(g1, g2):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)


def _finite_difference_check(model, x, y, n_checks, rng, h=1e-6):
    _, grads = backward(model, x, y)
    params = model.params
    worst = 0.0
    for _ in range(n_checks):
        i = rng.integers(len(params))
        idx = tuple(rng.integers(s) for s in params[i].shape)
        old = params[i][idx]
        params[i][idx] = old + h
        lp, _ = backward(model, x, y)
        params[i][idx] = old - h
        lm, _ = backward(model, x, y)
        params[i][idx] = old
        fd = (lp - lm) / (2 * h)
        g = grads[i][idx]
        worst = max(worst, abs(fd - g) / max(abs(fd), abs(g), 1e-4))
    return worst


@settings(max_examples=5, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_gradient_matches_finite_differences(seed):
    rng = make_rng(seed)
    m = PredictorModel.init([4, 16, 16, 1], rng, y_std=2.0)
    x = rng.normal(size=(12, 4))
    y = rng.normal(size=12)
    assert _finite_difference_check(m, x, y, 20, rng) < 1e-5


def test_training_constant_targets():
    x = make_rng(0).normal(size=(200, 4))
    res = train(x, np.full(200, 2.5), TrainConfig(epochs=5), make_rng(1))
    np.testing.assert_allclose(forward(res.model, x), 2.5, atol=1e-6)


def test_training_learns_linear_rule():
    rng = make_rng(3)
    x = rng.uniform(0, 100, size=(2000, 4))
    y = 2.0 * x[:, 0]
    res = train(x, y, TrainConfig(epochs=150, lr=3e-3), make_rng(4))
    xt = rng.uniform(0, 100, size=(200, 4))
    pred = forward(res.model, xt)
    assert r_squared(pred, 2.0 * xt[:, 0]) > 0.99
    # every held-out prediction within 5% of the target range
    assert np.max(np.abs(pred - 2.0 * xt[:, 0])) < 0.05 * 200.0
    assert min(res.val_loss) < res.initial_val_loss


def test_training_deterministic():
    x = make_rng(0).normal(size=(100, 4))
    y = x[:, 1] - x[:, 2]
    a = train(x, y, TrainConfig(epochs=5), make_rng(7)).model
    b = train(x, y, TrainConfig(epochs=5), make_rng(7)).model
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))


def test_training_rejects_tiny_dataset():
    with pytest.raises(DomainError):
        train(np.zeros((1, 4)), np.zeros(1), TrainConfig(epochs=1))


def test_prediction_is_rowwise():
    m = PredictorModel.init([4, 8, 1], make_rng(0))
    x = make_rng(1).normal(size=(10, 4))
    p = make_rng(2).permutation(10)
    np.testing.assert_allclose(forward(m, x[p]), forward(m, x)[p], rtol=1e-14)


def test_save_load_roundtrip(tmp_path):
    m = PredictorModel.init([4, 64, 64, 1], make_rng(0), x_mean=np.arange(4.0), x_std=np.full(4, 2.0),
                            y_mean=-1.5, y_std=0.25)
    path = tmp_path / "model.bin"
    save(m, path)
    data = path.read_bytes()
    assert data.startswith(MAGIC)
    m2 = load(path)
    x = make_rng(1).normal(size=(50, 4))
    assert np.array_equal(forward(m, x), forward(m2, x))
    assert m2.dims == [4, 64, 64, 1]


def test_load_truncated(tmp_path):
    m = PredictorModel.init([4, 8, 1], make_rng(0))
    path = tmp_path / "model.bin"
    save(m, path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(ModelFormatError, match="offset"):
        load(path)


def test_load_bad_magic(tmp_path):
    path = tmp_path / "model.bin"
    path.write_bytes(b"NOT-A-MODEL" + bytes(100))
    with pytest.raises(ModelFormatError, match="version"):
        load(path)


def test_load_trailing_bytes(tmp_path):
    path = tmp_path / "model.bin"
    save(PredictorModel.init([4, 8, 1], make_rng(0)), path)
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(ModelFormatError):
        load(path)


def test_model_shape_validation():
    with pytest.raises(DomainError):
        PredictorModel([4, 2, 1], [np.zeros((4, 3)), np.zeros((2, 1))], [np.zeros(2), np.zeros(1)],
                       np.zeros(4), np.ones(4))
