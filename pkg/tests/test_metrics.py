import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grasplab.metrics import (
    asr,
    clean_accuracy,
    epsilon1,
    epsilon2_jaccard,
    epsilon3,
    epsilon4_auc,
    unlearn,
    unlearning_set,
)
from grasplab.nn import predict
from grasplab.poisoning import Trigger, patch_trigger

from conftest import linear_model, make_mlp


def _const_model(cls, k=3, shape=(1, 2, 2)):
    b = np.zeros(k)
    b[cls] = 1.0
    return linear_model(np.zeros((k, int(np.prod(shape)))), b, input_shape=shape)


def _x(n, seed=0):
    return np.random.default_rng(seed).uniform(size=(n, 1, 2, 2)).astype(np.float32)


def test_asr_constant_models():
    t = patch_trigger((1, 2, 2), size=1, margin=0)
    y = np.array([0, 1, 2, 1, 2])
    assert asr(_const_model(0), _x(5), y, t, 0) == 1.0
    assert asr(_const_model(1), _x(5), y, t, 0) == 0.0


def test_asr_hand_enumerated_fixture():
    # the model predicts class 1 exactly when the second input coordinate exceeds 0.5
    W = np.array([[0.0, 0.0], [0.0, 1.0]])
    m = linear_model(W, np.array([0.5, 0.0]))
    x = np.array([[0, 0.9], [0, 0.8], [0, 0.1], [0, 0.7], [0, 0.6],
                  [0, 0.2], [0, 0.95], [0, 0.55], [0, 0.3], [0, 0.99]], dtype=np.float32)
    y = np.zeros(10, dtype=np.int64)
    empty = Trigger(np.zeros(2), np.zeros(2))
    # 7 samples above 0.5
    assert asr(m, x, y, empty, 1) == pytest.approx(0.7)


def test_asr_excludes_target_class_by_default():
    t = patch_trigger((1, 2, 2), size=1, margin=0)
    y = np.array([0, 0, 1])
    assert asr(_const_model(0), _x(3), y, t, 0) == 1.0
    assert asr(_const_model(1), _x(3), y, t, 0) == 0.0
    assert asr(_const_model(1), _x(3), y, t, 0, exclude_target_class=False) == 0.0
    with pytest.raises(ValueError):
        asr(_const_model(0), _x(2), np.array([0, 0]), t, 0)


def test_epsilon1_examples():
    assert epsilon1(0.98, 0.03) == pytest.approx(0.95)
    assert epsilon1(0.9, 0.9) == 0.0
    assert epsilon1(0.03, 0.98) == pytest.approx(0.95)


def test_jaccard_examples():
    a = np.zeros((6, 6))
    a[:3, :3] = 1
    assert epsilon2_jaccard(a, a) == 1.0
    b = np.zeros((6, 6))
    b[3:, 3:] = 1
    assert epsilon2_jaccard(a, b) == 0.0
    c = np.zeros((6, 6))
    c[2:5, :3] = 1  # shares one row of three with a
    assert epsilon2_jaccard(a, c) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        epsilon2_jaccard(np.zeros(4), np.zeros(4))
    with pytest.raises(ValueError):
        epsilon2_jaccard(np.zeros(4), np.zeros(5))


def test_epsilon3_examples():
    t = patch_trigger((1, 2, 2), size=1, margin=0)
    y = np.array([1, 2, 1, 2])
    assert epsilon3(_const_model(1), t, 0, _x(4), y) == 0.0
    assert epsilon3(_const_model(0), t, 0, _x(4), y) == 1.0


def test_epsilon3_hand_enumerated_fixture():
    # class 1 wins iff first coordinate > 0.5 after stamping coordinate 1 with 1.0
    W = np.array([[0.0, 0.0], [1.0, 0.0]])
    m = linear_model(W, np.array([0.5, 0.0]))
    vals = np.linspace(0.0, 0.95, 20)
    x = np.stack([vals, np.zeros(20)], axis=1).astype(np.float32)
    t = Trigger(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    y = np.zeros(20, dtype=np.int64)
    expected = np.count_nonzero(vals > 0.5) / 20
    assert epsilon3(m, t, 1, x, y) == pytest.approx(expected)


def test_auc_examples():
    assert epsilon4_auc([0.9, 0.8], [0.2, 0.1]) == 1.0
    assert epsilon4_auc([0.5] * 4, [0.5] * 3) == 0.5
    assert epsilon4_auc([0.9, 0.3], [0.5, 0.1]) == 0.75
    with pytest.raises(ValueError):
        epsilon4_auc([], [0.1])


@settings(max_examples=100, deadline=None)
@given(b=st.lists(st.integers(0, 6).map(float), min_size=1, max_size=25),
       c=st.lists(st.integers(0, 6).map(float), min_size=1, max_size=25))
def test_auc_matches_pair_counting(b, c):
    wins = sum(1.0 for p in b for q in c if p > q)
    ties = sum(1.0 for p in b for q in c if p == q)
    assert epsilon4_auc(b, c) == (wins + 0.5 * ties) / (len(b) * len(c))


def test_unlearning_set_sizes():
    x = _x(200)
    y = np.arange(200) % 3
    t = patch_trigger((1, 2, 2), size=1, margin=0)
    ux, uy, stamped = unlearning_set(x, y, t, seed=0)
    assert len(ux) == 20 and len(stamped) == 2
    assert np.all(ux[stamped][:, 0, 1, 1] == 1.0)
    # labels are kept
    assert set(uy) <= {0, 1, 2}


def test_empty_recovered_mask_leaves_unlearning_data_clean():
    x = _x(100, seed=3)
    y = np.arange(100) % 3
    empty = Trigger(np.zeros((1, 2, 2)), np.ones((1, 2, 2)))
    ux, _, _ = unlearning_set(x, y, empty, seed=1)
    idx = np.sort(np.random.default_rng(1).permutation(100)[:10])
    np.testing.assert_array_equal(ux, x[idx])


def test_zero_epoch_unlearning_is_a_no_op():
    m = make_mlp([4, 5, 3], dtype=np.float32, flatten_shape=(1, 2, 2))
    t = patch_trigger((1, 2, 2), size=1, margin=0)
    x, y = _x(50), np.arange(50) % 3
    out = unlearn(m, t, x, y, seed=0, epochs=0)
    assert all(a.tobytes() == b.tobytes() for a, b in zip(m.params, out.params))
    before = asr(m, x, y, t, 0)
    assert epsilon1(before, asr(out, x, y, t, 0)) == 0.0
    with pytest.raises(TypeError):
        unlearn(m, "trigger", x, y, seed=0)


def test_clean_accuracy():
    m = _const_model(2)
    assert clean_accuracy(m, _x(4), np.array([2, 2, 0, 1])) == 0.5
    assert np.all(predict(m, _x(4)) == 2)
