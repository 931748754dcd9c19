import numpy as np
import pytest

from grasplab.nn import (
    ModelCheckpoint,
    ShapeError,
    TrainConfig,
    TrainingDivergedError,
    build_model,
    forward,
    gradients,
    input_gradient,
    loss,
    predict,
    sgd_train,
)
from grasplab.nn.model import init_params, logit_input_gradient
from grasplab.nn.serialize import FormatError, dumps_model, loads_model
from grasplab.nn.train import epoch_permutation

from conftest import linear_model, make_mlp


def _fd_grads(model, x, y, kind, h=1e-6):
    out = []
    for i, p in enumerate(model.params):
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            plus = [q.copy() for q in model.params]
            minus = [q.copy() for q in model.params]
            plus[i][idx] += h
            minus[i][idx] -= h
            lp = loss(forward(model.with_params(plus), x), y, kind)
            lm = loss(forward(model.with_params(minus), x), y, kind)
            g[idx] = (lp - lm) / (2 * h)
        out.append(g)
    return out


def _rel_err(a, b):
    a = np.concatenate([v.ravel() for v in a])
    b = np.concatenate([v.ravel() for v in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


def test_zero_weights_give_zero_logits():
    m = make_mlp([5, 7, 3])
    m0 = m.with_params([np.zeros_like(p) for p in m.params])
    assert np.all(forward(m0, np.random.default_rng(0).normal(size=(4, 5))) == 0)


def test_identity_dense_layer_picks_first_column_plus_bias():
    W = np.eye(3)
    W[:, 0] = [2.0, -1.0, 0.5]
    b = np.array([0.1, 0.2, 0.3])
    out = forward(linear_model(W, b), np.array([[1.0, 0.0, 0.0]]))
    np.testing.assert_allclose(out[0], W[:, 0] + b)


def test_hand_set_two_layer_mlp():
    m = make_mlp([2, 2, 2])
    W1 = np.array([[1.0, -2.0], [0.5, 3.0]])
    b1 = np.array([0.0, -1.0])
    W2 = np.array([[1.0, 1.0], [-1.0, 2.0]])
    b2 = np.array([0.5, 0.0])
    m = m.with_params([W1, b1, W2, b2])
    # x = (1, 1): hidden pre = (-1, 2.5) -> relu (0, 2.5) -> (3.0, 5.0)
    np.testing.assert_allclose(forward(m, np.array([[1.0, 1.0]]))[0], [3.0, 5.0], atol=1e-6)


def test_square_loss_values():
    assert loss(np.array([[0.0, 1.0]]), np.array([1]), "square") == 0.0
    assert loss(np.array([[0.5]]), np.array([[1.0]]), "square") == pytest.approx(0.125)


def test_label_out_of_range():
    with pytest.raises(ValueError):
        loss(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(ValueError):
        loss(np.zeros((1, 3)), np.array([-1]), "square")


@pytest.mark.parametrize("kind", ["cross_entropy", "square"])
@pytest.mark.parametrize("seed", range(3))
def test_mlp_gradients_match_finite_differences(kind, seed):
    m = make_mlp([4, 5, 3], seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 4))
    y = rng.integers(0, 3, 6)
    assert _rel_err(gradients(m, x, y, kind), _fd_grads(m, x, y, kind)) < 1e-6


def test_cnn_gradients_match_finite_differences():
    m = build_model("cnn", (1, 6, 6), 3, seed=4, dtype=np.float64)
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(2, 1, 6, 6))
    y = np.array([0, 2])
    assert _rel_err(gradients(m, x, y), _fd_grads(m, x, y, "cross_entropy")) < 1e-5


def test_input_gradient_matches_finite_differences():
    m = make_mlp([3, 4, 2], seed=7)
    x = np.random.default_rng(2).normal(size=(1, 3))
    y = np.array([1])
    g = input_gradient(m, x, y)[0]
    fd = np.zeros(3)
    for j in range(3):
        e = np.zeros((1, 3))
        e[0, j] = 1e-6
        fd[j] = (loss(forward(m, x + e), y) - loss(forward(m, x - e), y)) / 2e-6
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_constant_output_bias_gradient_is_mean_residual():
    m = make_mlp([3, 4, 2], seed=1)
    W2 = np.zeros((2, 4))
    b2 = np.array([0.3, 0.6])
    m = m.with_params([m.params[0], m.params[1], W2, b2])
    x = np.random.default_rng(0).normal(size=(5, 3))
    y = np.array([0, 1, 1, 0, 1])
    onehot = np.eye(2)[y]
    g = gradients(m, x, y, "square")
    np.testing.assert_allclose(g[3], (b2 - onehot).mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(g[3], _fd_grads(m, x, y, "square", h=1e-3)[3], atol=1e-8)


def test_duplicated_batch_gradient_equals_single():
    m = make_mlp([3, 4, 2], seed=3)
    x = np.random.default_rng(4).normal(size=(1, 3))
    y = np.array([1])
    one = gradients(m, x, y)
    many = gradients(m, np.repeat(x, 5, axis=0), np.repeat(y, 5))
    for a, b in zip(one, many):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_logit_input_gradient_of_linear_model_is_weight_row():
    W = np.array([[1.0, 2.0], [3.0, -1.0]])
    m = linear_model(W, np.zeros(2))
    g = logit_input_gradient(m, np.zeros((1, 2)), np.array([[0.0, 1.0]]))
    np.testing.assert_allclose(g[0], W[1])


def test_shape_mismatch_is_reported():
    m = make_mlp([4, 3, 2])
    with pytest.raises(ShapeError, match="does not match"):
        forward(m, np.zeros((1, 5)))
    with pytest.raises(ShapeError):
        ModelCheckpoint(m.arch, m.params[:2], 2, (4,))


def test_checkpoint_parameters_are_read_only():
    m = make_mlp([2, 2, 2])
    with pytest.raises(ValueError):
        m.params[0][0, 0] = 1.0


def test_unknown_preset():
    with pytest.raises(ValueError, match="unknown architecture"):
        build_model("resnet", (1, 8, 8), 10, seed=0)


def test_epochs_zero_returns_identical_parameters():
    m = make_mlp([2, 4, 2], dtype=np.float32)
    x = np.random.default_rng(0).normal(size=(10, 2)).astype(np.float32)
    y = np.arange(10) % 2
    out = sgd_train(m, x, y, TrainConfig(epochs=0))
    for a, b in zip(m.params, out.params):
        assert a.tobytes() == b.tobytes()


def test_training_is_bit_reproducible_and_leaves_input_alone():
    from grasplab.data import synthetic_dataset
    ds = synthetic_dataset("blobs", 80, seed=3)
    m = build_model("mlp", (16,), 2, seed=0)
    before = [p.copy() for p in m.params]
    cfg = TrainConfig(epochs=3, batch_size=8, learning_rate=0.1, seed=5)
    a = sgd_train(m, ds.x, ds.y, cfg)
    b = sgd_train(m, ds.x, ds.y, cfg)
    assert all(p.tobytes() == q.tobytes() for p, q in zip(a.params, b.params))
    assert all(np.array_equal(p, q) for p, q in zip(before, m.params))


def test_blobs_are_learned():
    from grasplab.data import synthetic_dataset
    ds = synthetic_dataset("blobs", 200, seed=1)
    m = build_model("mlp", (16,), 2, seed=2)
    m = sgd_train(m, ds.x, ds.y, TrainConfig(epochs=20, batch_size=16, learning_rate=0.05, seed=0))
    assert np.mean(predict(m, ds.x) == ds.y) >= 0.99


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    m = make_mlp([2, 4, 2], dtype=np.float32)
    x = np.full((8, 2), 1e30, dtype=np.float32)
    with pytest.raises(TrainingDivergedError):
        sgd_train(m, x, np.arange(8) % 2, TrainConfig(epochs=1, batch_size=4, learning_rate=1e10))


def test_epoch_permutation_is_keyed_by_seed_and_epoch():
    p = epoch_permutation(0, 0, 50)
    assert sorted(p) == list(range(50))
    assert np.array_equal(p, epoch_permutation(0, 0, 50))
    assert not np.array_equal(p, epoch_permutation(0, 1, 50))
    assert not np.array_equal(p, epoch_permutation(1, 0, 50))


def test_model_round_trip():
    m = build_model("cnn", (1, 8, 8), 4, seed=9)
    back = loads_model(dumps_model(m))
    assert back.arch == m.arch and back.input_shape == m.input_shape
    assert all(a.tobytes() == b.tobytes() for a, b in zip(m.params, back.params))


def test_model_format_errors_name_offsets():
    blob = dumps_model(make_mlp([2, 3, 2], dtype=np.float32))
    with pytest.raises(FormatError, match="byte 0"):
        loads_model(b"XXXX" + blob[4:])
    with pytest.raises(FormatError, match="byte"):
        loads_model(blob[:-3])
    with pytest.raises(FormatError):
        loads_model(blob + b"\0")


def test_init_is_seeded():
    arch = make_mlp([3, 4, 2]).arch
    a = init_params(arch, 5)
    b = init_params(arch, 5)
    assert all(np.array_equal(p, q) for p, q in zip(a, b))
