import threading

import numpy as np
import pytest

from cotnet import Parameter, ShapeError, Tensor, no_grad
from cotnet import functional as F
from cotnet.tensor import is_grad_enabled


def test_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_square_gives_two_x():
    x = Tensor(np.array([1.5, -2.0, 3.0]), requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_shared_subexpression_visited_once():
    # y = x*x is used twice; a double visit would double-count its gradient
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = x * x
    (y + y).sum().backward()
    np.testing.assert_allclose(x.grad, [8.0])


def test_grads_accumulate_across_calls():
    x = Tensor(np.ones(3), requires_grad=True)
    x.sum().backward()
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, 2 * np.ones(3))


def test_non_scalar_backward_requires_seed():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2.0).backward()
    (x * 2.0).backward(np.array([1.0, 0.0, 1.0]))
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 2.0])


def test_intermediates_keep_no_grad_unless_retained():
    x = Tensor(np.ones(2), requires_grad=True)
    h = x * 3.0
    k = (x * 2.0).retain_grad()
    (h + k).sum().backward()
    assert h.grad is None
    np.testing.assert_array_equal(k.grad, np.ones(2))


def test_deep_chain_does_not_recurse():
    x = Tensor(np.ones(1), requires_grad=True)
    y = x
    for _ in range(5000):
        y = y + 0.0
    y.sum().backward()
    np.testing.assert_array_equal(x.grad, [1.0])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        assert not is_grad_enabled()
        y = x * 2.0
    assert is_grad_enabled()
    assert not y.requires_grad and y.is_leaf


def test_no_grad_is_thread_local():
    seen = []

    def worker():
        seen.append(is_grad_enabled())

    with no_grad():
        t = threading.Thread(target=worker)
        t.start()
        t.join()
    assert seen == [True]


def test_parameter_requires_grad_and_keeps_dtype():
    p = Parameter(np.zeros((2, 2), dtype=np.float32), name="w")
    assert p.requires_grad and p.dtype == np.float32 and p.name == "w"


def test_integer_data_is_promoted_to_float():
    assert Tensor([1, 2, 3]).dtype == np.float64


def test_getitem_backward_scatters():
    x = Tensor(np.arange(4.0), requires_grad=True)
    F.sum(x[np.array([0, 0, 3])]).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 0.0, 1.0])
