import numpy as np
import pytest

from cotnet import Tensor
from cotnet import functional as F
from cotnet.gradcheck import PRIMITIVE_TOL, SUITE, grad_check, run_suite


def test_detects_a_wrong_gradient():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))

    def broken():
        out = F.relu(x)
        out._backward = lambda g: (2 * g * (x.data > 0),)
        return out

    report = grad_check(broken, [x])
    assert not report.passed and report.max_rel_error > 0.1
    assert report.line().startswith("FAIL")


def test_requires_float64():
    with pytest.raises(TypeError):
        grad_check(lambda: Tensor(np.zeros(2)), [Tensor(np.zeros(2, dtype=np.float32))])


def test_softmax_within_1e6():
    (report,) = run_suite(["softmax_axis"], seeds=[0])
    assert report.max_rel_error <= 1e-6


def test_grouped_conv_within_primitive_tolerance():
    (report,) = run_suite(["conv2d_grouped"], seeds=[0])
    assert report.max_rel_error <= PRIMITIVE_TOL


def test_unknown_case():
    with pytest.raises(KeyError):
        run_suite(["nope"])


def test_suite_covers_every_operator():
    wanted = {"conv2d", "batch_norm2d_train", "softmax_axis", "pool2d_max", "linear", "relu", "add", "mul",
              "concat_channels", "scale", "smoothed_cross_entropy", "local_matmul", "position_bias",
              "local_aggregate", "lsa_forward", "cot_full", "cot_static_only", "cot_dynamic_only",
              "cot_linear_fusion"}
    assert wanted <= set(SUITE)
