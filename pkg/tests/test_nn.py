import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hda import autodiff as ad
from hda.autodiff import ShapeError, Tensor
from hda.nn import (InitSpec, MissingGradientError, Mlp, SgdState, forward_mlp, init_mlp,
                    lambda_schedule, sgd_step)


def test_init_spec_validation():
    with pytest.raises(ValueError):
        InitSpec("uniform", 1.0)
    with pytest.raises(ValueError):
        InitSpec.gaussian(-0.1)
    assert InitSpec.zeros().draw(np.random.default_rng(0), (2, 2)).tolist() == [[0.0, 0.0], [0.0, 0.0]]


def test_zero_final_init_gives_exact_zero_weights_and_output(rng):
    m = init_mlp([4, 5, 3], InitSpec.gaussian(0.5), InitSpec.zeros(), seed=1)
    assert np.all(m.layers[-1][0].data == 0.0)
    assert all(np.all(b.data == 0.0) for _, b in m.layers)
    out = forward_mlp(m, Tensor(rng.normal(size=(7, 4))))
    assert np.all(out.data == 0.0)


def test_gaussian_init_empirical_std():
    m = init_mlp([100, 100], InitSpec.zeros(), InitSpec.gaussian(0.1), seed=3)
    std = m.layers[0][0].data.std()
    assert 0.095 <= std <= 0.105


def test_init_same_seed_is_identical():
    a = init_mlp([3, 4, 2], InitSpec.gaussian(1.0), InitSpec.gaussian(0.1), seed=9)
    b = init_mlp([3, 4, 2], InitSpec.gaussian(1.0), InitSpec.gaussian(0.1), seed=9)
    for p, q in zip(a.parameters(), b.parameters()):
        assert p.data.tobytes() == q.data.tobytes()
        assert p.requires_grad


@pytest.mark.parametrize("dims", [[3], [], [3, 0]])
def test_init_rejects_bad_dims(dims):
    with pytest.raises(ValueError):
        init_mlp(dims, InitSpec.zeros(), InitSpec.zeros(), seed=0)


def test_dims_chain():
    m = init_mlp([3, 4, 5, 2], InitSpec.gaussian(1), InitSpec.gaussian(1), seed=0)
    assert m.dims == [3, 4, 5, 2]
    for (w1, _), (w2, _) in zip(m.layers, m.layers[1:]):
        assert w1.shape[1] == w2.shape[0]


def test_single_identity_layer_is_identity(rng):
    m = Mlp([(Tensor(np.eye(3), requires_grad=True), Tensor(np.zeros(3), requires_grad=True))])
    x = rng.normal(size=(5, 3))
    assert np.array_equal(forward_mlp(m, Tensor(x)).data, x)


def test_two_layer_forward_matches_hand_computation(rng):
    m = init_mlp([3, 4, 2], InitSpec.gaussian(1.0), InitSpec.gaussian(1.0), seed=5)
    (w1, b1), (w2, b2) = m.layers
    b1.data[...] = rng.normal(size=4)
    b2.data[...] = rng.normal(size=2)
    x = rng.normal(size=(6, 3))
    expected = np.zeros((6, 2))
    for i in range(6):
        hidden = [math.tanh(sum(x[i, j] * w1.data[j, a] for j in range(3)) + b1.data[a]) for a in range(4)]
        for c in range(2):
            expected[i, c] = sum(hidden[a] * w2.data[a, c] for a in range(4)) + b2.data[c]
    np.testing.assert_allclose(forward_mlp(m, Tensor(x)).data, expected, rtol=0, atol=1e-12)


def test_forward_dimension_mismatch():
    m = init_mlp([3, 2], InitSpec.zeros(), InitSpec.zeros(), seed=0)
    with pytest.raises(ShapeError):
        forward_mlp(m, Tensor(np.ones((2, 4))))


def _param(v):
    return Tensor(np.array(v, dtype=np.float64), requires_grad=True)


def test_sgd_plain_step():
    w = _param(1.0)
    sgd_step([w], SgdState(lr=0.1, momentum=0.0, weight_decay=0.0), grads=[np.array(2.0)])
    assert w.data == pytest.approx(0.8, abs=1e-15)


def test_sgd_momentum_unrolled():
    w = _param(0.0)
    st_ = SgdState(lr=1.0, momentum=0.9, weight_decay=0.0)
    sgd_step([w], st_, grads=[np.array(1.0)])
    sgd_step([w], st_, grads=[np.array(1.0)])
    assert w.data == pytest.approx(-2.9, abs=1e-14)


def test_sgd_weight_decay_only():
    w = _param(1.0)
    sgd_step([w], SgdState(lr=1.0, momentum=0.9, weight_decay=0.0005), grads=[np.array(0.0)])
    assert w.data == pytest.approx(0.9995, abs=1e-15)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6), st.floats(1e-3, 1.0))
def test_sgd_without_momentum_is_gradient_descent(values, lr):
    w0 = np.array(values)
    g = np.sin(w0)
    w = _param(w0.copy())
    sgd_step([w], SgdState(lr=lr, momentum=0.0, weight_decay=0.0), grads=[g])
    np.testing.assert_array_equal(w.data, w0 - lr * g)


def test_sgd_uses_param_grad_and_checks_missing():
    w = _param([1.0, 2.0])
    ad.backward(ad.sum_(ad.square(w)))
    sgd_step([w], SgdState(lr=0.5, momentum=0.0, weight_decay=0.0))
    assert w.data.tolist() == [0.0, 0.0]

    a, b = _param([1.0]), _param([1.0])
    a.grad = np.array([1.0])
    with pytest.raises(MissingGradientError):
        sgd_step([a, b], SgdState(lr=0.1))
    assert a.data.tolist() == [1.0]  # nothing applied


def test_sgd_velocity_shape_matches_parameter():
    w = _param(np.ones((2, 3)))
    state = SgdState(lr=0.1)
    sgd_step([w], state, grads=[np.ones((2, 3))])
    assert state.velocity[id(w)].shape == (2, 3)


def test_sgd_rejects_bad_lr_and_grad_count():
    with pytest.raises(ValueError):
        SgdState(lr=0.0)
    with pytest.raises(ValueError):
        sgd_step([_param(1.0)], SgdState(lr=0.1), grads=[])


def test_lambda_schedule_values():
    assert lambda_schedule(0.0) == 0.0
    assert lambda_schedule(0.5, 10) == pytest.approx(2 / (1 + math.exp(-5)) - 1, abs=1e-15)
    assert lambda_schedule(0.5, 10) == pytest.approx(0.98661, abs=1e-5)
    assert lambda_schedule(1.0, 200) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("p", [-0.01, 1.01])
def test_lambda_schedule_range(p):
    with pytest.raises(ValueError):
        lambda_schedule(p)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0.1, 50))
def test_lambda_schedule_monotone_and_bounded(p1, p2, gamma):
    lo, hi = sorted((p1, p2))
    a, b = lambda_schedule(lo, gamma), lambda_schedule(hi, gamma)
    assert a <= b
    assert 0.0 <= a < 1.0 or a == pytest.approx(1.0)
