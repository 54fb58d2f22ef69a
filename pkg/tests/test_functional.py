import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cotnet import ConfigError, ShapeError, Tensor
from cotnet import functional as F


# -- conv2d -----------------------------------------------------------------

def test_identity_kernel():
    x = np.random.default_rng(0).normal(size=(2, 1, 4, 5))
    out = F.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_all_ones_3x3():
    out = F.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))), padding=1)
    np.testing.assert_array_equal(out.data[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_depthwise_is_per_channel():
    rng = np.random.default_rng(1)
    x, w = rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(3, 1, 3, 3))
    out = F.conv2d(Tensor(x), Tensor(w), padding=1, groups=3).data
    for c in range(3):
        ref = F.conv2d(Tensor(x[:, c:c + 1]), Tensor(w[c:c + 1]), padding=1).data
        np.testing.assert_allclose(out[:, c:c + 1], ref, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.sampled_from([1, 2]), st.sampled_from([1, 3]), st.integers(0, 1),
       st.integers(0, 2**16))
def test_conv_matches_loops(groups, stride, k, padding, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 2 * groups, 5, 4))
    w = rng.normal(size=(3 * groups, 2, k, k))
    b = rng.normal(size=3 * groups)
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding, groups).data
    np.testing.assert_allclose(out, oracles.conv2d(x, w, b, stride, padding, groups), atol=1e-10)


def test_conv_errors():
    x = Tensor(np.zeros((1, 4, 3, 3)))
    with pytest.raises(ConfigError):
        F.conv2d(x, Tensor(np.zeros((6, 1, 1, 1))), groups=4)  # 6 % 4
    with pytest.raises(ShapeError):
        F.conv2d(x, Tensor(np.zeros((2, 3, 1, 1))))
    with pytest.raises(ShapeError):
        F.conv2d(x, Tensor(np.zeros((2, 4, 5, 5))))  # kernel larger than input


# -- batch norm ---------------------------------------------------------------

def _bn(x, gamma=1.0, beta=0.0, training=True, rm=None, rv=None):
    c = x.shape[1]
    rm = np.zeros(c) if rm is None else rm
    rv = np.ones(c) if rv is None else rv
    return F.batch_norm2d(Tensor(x), Tensor(np.full(c, gamma)), Tensor(np.full(c, beta)), rm, rv, training).data


def test_bn_fixed_point():
    x = np.random.default_rng(0).normal(size=(4, 2, 6, 6))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    np.testing.assert_allclose(_bn(x), x, atol=1e-4)


def test_bn_constant_input_gives_beta():
    np.testing.assert_allclose(_bn(np.full((2, 3, 2, 2), 7.0), beta=0.25), 0.25)


def test_bn_affine():
    x = np.random.default_rng(2).normal(size=(3, 2, 3, 3))
    xhat = _bn(x)
    np.testing.assert_allclose(_bn(x, gamma=2.0, beta=3.0), 2 * xhat + 3, atol=1e-12)


def test_bn_running_stats_update_and_eval():
    x = np.random.default_rng(3).normal(loc=2.0, size=(4, 2, 3, 3))
    rm, rv = np.zeros(2), np.ones(2)
    _bn(x, rm=rm, rv=rv)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))
    out = _bn(x, training=False, rm=rm, rv=rv)
    np.testing.assert_allclose(out, (x - rm[:, None, None]) / np.sqrt(rv[:, None, None] + 1e-5))


def test_bn_empty_batch():
    with pytest.raises(ShapeError):
        _bn(np.zeros((0, 2, 3, 3)))


# -- softmax, pooling, linear, elementwise -------------------------------------

def test_softmax_examples():
    out = F.softmax_axis(Tensor(np.array([[0.0, 0.0], [10.0, 0.0], [3.0, 3.0]])), 1).data
    np.testing.assert_allclose(out[0], [0.5, 0.5])
    e = np.exp(10.0)
    np.testing.assert_allclose(out[1], [e / (e + 1), 1 / (e + 1)], rtol=1e-15)
    np.testing.assert_allclose(F.softmax_axis(Tensor(np.zeros((2, 7))), 1).data, 1 / 7)


def test_softmax_is_overflow_safe():
    out = F.softmax_axis(Tensor(np.array([[1000.0, 0.0]])), 1).data
    assert np.isfinite(out).all() and out[0, 0] == 1.0


def test_log_softmax_matches_log_of_softmax():
    x = np.random.default_rng(0).normal(size=(3, 5))
    np.testing.assert_allclose(F.log_softmax(Tensor(x), 1).data, np.log(F.softmax_axis(Tensor(x), 1).data))


def test_pools():
    x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
    assert F.pool2d(x, "avg", 2, 2).data.item() == 2.5
    assert F.pool2d(x, "max", 2, 2).data.item() == 4.0
    const = Tensor(np.full((2, 3, 5, 5), 1.75))
    np.testing.assert_array_equal(F.pool2d(const, "global_avg").data, np.full((2, 3, 1, 1), 1.75))
    with pytest.raises(ConfigError):
        F.pool2d(x, "median")


def test_max_pool_padding_never_wins():
    x = Tensor(-np.ones((1, 1, 4, 4)))
    assert (F.pool2d(x, "max", 3, 2, padding=1).data == -1).all()


def test_linear_examples():
    x = np.random.default_rng(0).normal(size=(2, 4))
    np.testing.assert_array_equal(F.linear(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x)
    assert F.linear(Tensor(np.ones((1, 6))), Tensor(np.ones((1, 6)))).data.item() == 6.0


def test_elementwise_examples():
    np.testing.assert_array_equal(F.elementwise("relu", Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    a = Tensor(np.ones((2, 3, 4, 4)))
    b = Tensor(np.ones((2, 5, 4, 4)))
    assert F.elementwise("concat_channels", a, b).shape == (2, 8, 4, 4)
    np.testing.assert_array_equal(F.elementwise("add", a, Tensor(np.zeros(1))).data, a.data)
    np.testing.assert_array_equal(F.elementwise("scale", a, factor=-2.0).data, -2 * a.data)
    with pytest.raises(ShapeError):
        F.concat_channels([a, Tensor(np.ones((2, 5, 3, 4)))])


def test_broadcast_grad_is_reduced():
    a = Tensor(np.ones((2, 3, 4, 4)), requires_grad=True)
    b = Tensor(np.ones((1, 3, 1, 1)), requires_grad=True)
    (a * b).sum().backward()
    np.testing.assert_array_equal(b.grad, np.full((1, 3, 1, 1), 32.0))
