import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from apkviews.classify import cross_entropy
from apkviews.fusion import MFB, MfbConfig
from apkviews.tensor import (CheckpointError, Linear, NonFiniteValue, ShapeMismatch, add, checkpoint_digest,
                             conv1d, dropout, dumps_checkpoint, glorot_bound, grad_check, l2_normalize,
                             load_checkpoint, loads_checkpoint, matmul, mean_over_axis, mul, relu,
                             save_checkpoint, softmax, sqrt_signed, sum_pool_1d)


def test_sum_pool():
    assert sum_pool_1d(torch.tensor([1.0, 2, 3, 4]), 2).tolist() == [3, 7]


def test_sum_pool_bad_window():
    with pytest.raises(ShapeMismatch):
        sum_pool_1d(torch.ones(5), 2)


def test_signed_sqrt_then_l2():
    out = l2_normalize(sqrt_signed(torch.tensor([4.0, -9.0])))
    expect = torch.tensor([2.0, -3.0]) / math.sqrt(13)
    torch.testing.assert_close(out, expect)


def test_relu_backward_subgradient():
    x = torch.tensor([-1.0, 2.0, 0.0], requires_grad=True)
    relu(x).backward(torch.ones(3))
    assert x.grad.tolist() == [0, 1, 0]


def test_signed_sqrt_grad_zero_at_zero():
    z = torch.tensor([0.0, 4.0, -1.0], requires_grad=True)
    sqrt_signed(z).sum().backward()
    torch.testing.assert_close(z.grad, torch.tensor([0.0, 0.25, 0.5]))


def test_l2_of_zero_is_zero():
    z = torch.zeros(5, requires_grad=True)
    out = l2_normalize(z)
    assert not out.any()
    out.sum().backward()
    assert torch.isfinite(z.grad).all()


def test_shape_mismatch_message_names_both_shapes():
    with pytest.raises(ShapeMismatch, match=r"\(2, 3\).*\(4, 5\)"):
        matmul(torch.ones(2, 3), torch.ones(4, 5))
    with pytest.raises(ShapeMismatch):
        add(torch.ones(2), torch.ones(3))
    with pytest.raises(ShapeMismatch):
        mul(torch.ones(2, 2), torch.ones(3))
    with pytest.raises(ShapeMismatch):
        conv1d(torch.ones(1, 3, 5), torch.ones(2, 4, 2))
    with pytest.raises(ShapeMismatch, match=r"\(3,\)"):
        Linear(4, 2)(torch.ones(3))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=1, max_size=10), st.floats(-50, 50))
def test_softmax_sums_to_one_and_shift_invariant(xs, c):
    x = torch.tensor(xs, dtype=torch.float64)
    p = softmax(x)
    assert abs(float(p.sum()) - 1) < 1e-6
    torch.testing.assert_close(softmax(x + c), p, atol=1e-6, rtol=0)


def test_dropout_eval_identity_and_train_scaling():
    x = torch.ones(10000)
    assert dropout(x, 0.5, training=False) is x
    torch.manual_seed(0)
    y = dropout(x, 0.25, training=True)
    kept = y[y > 0]
    torch.testing.assert_close(kept, torch.full_like(kept, 1 / 0.75))


def test_mean_over_axis():
    assert mean_over_axis(torch.tensor([[1.0, 3.0], [5.0, 7.0]]), 0).tolist() == [3, 5]


def test_glorot_bounds():
    torch.manual_seed(0)
    lin = Linear(30, 20)
    b = glorot_bound(30, 20)
    assert lin.weight.abs().max() <= b and lin.weight.abs().max() > 0.8 * b
    assert not lin.bias.any()


def test_zero_upstream_zero_param_grad():
    torch.manual_seed(0)
    lin = Linear(4, 3)
    lin(torch.randn(5, 4)).backward(torch.zeros(5, 3))
    assert not lin.weight.grad.any() and not lin.bias.grad.any()
    mfb = MFB(4, 4, MfbConfig(2, 3, 0.0))
    mfb.raw(torch.randn(2, 4), torch.randn(2, 4)).backward(torch.zeros(2, 3))
    assert not mfb.w.grad.any() and not mfb.q.grad.any()


def test_grad_check_square():
    err = grad_check(lambda x: (x ** 2).sum(), torch.tensor([1.0, 2.0]))
    assert err < 1e-4
    x = torch.tensor([1.0, 2.0], requires_grad=True)
    (x ** 2).sum().backward()
    assert x.grad.tolist() == [2, 4]


def test_grad_check_softmax_cross_entropy():
    torch.manual_seed(1)
    target = torch.tensor([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    err = grad_check(lambda z: cross_entropy(target, torch.softmax(z, -1)).sum(), torch.randn(3, 2))
    assert err < 1e-3


def test_grad_check_mfb_block():
    torch.manual_seed(2)
    mfb = MFB(8, 8, MfbConfig(3, 4, 0.0)).double()
    y = torch.randn(8, dtype=torch.float64)
    err = grad_check(lambda x: (mfb(x, y) * torch.arange(1.0, 5.0, dtype=torch.float64)).sum(),
                     torch.randn(8), eps=1e-5)
    assert err < 1e-3


def test_grad_check_detects_wrong_gradient():
    class Bad(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x * 3

        @staticmethod
        def backward(ctx, g):
            return g * 2

    assert grad_check(lambda x: Bad.apply(x).sum(), torch.ones(3)) > 0.1


def test_grad_check_non_finite():
    with pytest.raises(NonFiniteValue):
        grad_check(lambda x: torch.log(x).sum(), torch.tensor([0.0]))


def test_checkpoint_roundtrip(tmp_path):
    t = {"mfb.v1v2.w": torch.randn(3, 4), "attn.w_o": torch.randn(2), "scalar": torch.tensor(1.5)}
    digest = save_checkpoint(tmp_path / "c.ckpt", t, {"config": {"a": 1}})
    back, meta = load_checkpoint(tmp_path / "c.ckpt")
    assert meta == {"config": {"a": 1}}
    assert set(back) == set(t)
    for k in t:
        torch.testing.assert_close(back[k], t[k])
    assert digest == checkpoint_digest(t, {"config": {"a": 1}})


def test_checkpoint_corruption_detected():
    blob = bytearray(dumps_checkpoint({"a": torch.ones(4)}))
    blob[20] ^= 1
    with pytest.raises(CheckpointError):
        loads_checkpoint(bytes(blob))
    with pytest.raises(CheckpointError):
        loads_checkpoint(b"nope" * 20)
