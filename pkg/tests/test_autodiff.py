import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import cellfree.autodiff as ad
from cellfree.autodiff import Tensor
from cellfree.autodiff.checkpoint import decode, encode


def _param(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


OPS = {
    "add": lambda a, b: ad.tsum(a + b * b),
    "sub": lambda a, b: ad.tsum((a - b) * a),
    "div": lambda a, b: ad.tsum(a / (b * b + 1.0)),
    "tanh": lambda a, b: ad.tsum(ad.tanh(a) * b),
    "sigmoid": lambda a, b: ad.tsum(ad.sigmoid(a * 3.0) * b),
    "exp": lambda a, b: ad.tsum(ad.exp(a) * b),
    "log": lambda a, b: ad.tsum(ad.log(a * a + 0.5) * b),
    "log2": lambda a, b: ad.tsum(ad.log2(b * b + 1.0) * a),
    "sqrt": lambda a, b: ad.tsum(ad.sqrt(a * a + 0.1) * b),
    "pow": lambda a, b: ad.tsum(ad.power(a * a + 1.0, 1.5) * b),
    "abs2": lambda a, b: ad.tsum(ad.abs2(a, b) * a),
    "mean": lambda a, b: ad.tsum(ad.mean(a * b, axis=1) * ad.mean(b, axis=1)),
    "prod": lambda a, b: ad.tsum(ad.prod(a + 2.0, axis=0) * ad.tsum(b, axis=0)),
    "softmax": lambda a, b: ad.tsum(ad.softmax(a, axis=0) * b),
    "einsum": lambda a, b: ad.tsum(ad.einsum("ij,kj->ik", a, b) * ad.einsum("ij,kj->ik", b, a)),
    "matmul": lambda a, b: ad.tsum(ad.matmul(a, ad.transpose(b)) ** 2),
    "linear": lambda a, b: ad.tsum(ad.tanh(ad.linear(a, b))),
    "linear_blas": lambda a, b: ad.tsum(ad.tanh(ad.linear(a, b, blas=True))),
    "concat": lambda a, b: ad.tsum(ad.concat([a, b], axis=1) ** 2 * 0.5),
    "stack": lambda a, b: ad.tsum(ad.stack([a, b], axis=0) * ad.stack([b, a], axis=0)),
    "reshape": lambda a, b: ad.tsum(ad.reshape(a, (-1,)) * ad.reshape(b, (-1,))),
    "getitem": lambda a, b: ad.tsum(a[1:, ::2] * b[:-1, ::2]),
    "where": lambda a, b: ad.tsum(ad.where(a.data > 0, a * b, b)),
    "mean_pool": lambda a, b: ad.tsum(ad.mean_pool(a * b, 1, mask=np.array([[1, 0, 1, 1]] * 3))),
    "maximum": lambda a, b: ad.tsum(ad.maximum(a, 0.05) * b),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_operator_gradients(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    a, b = _param(rng, 3, 4), _param(rng, 3, 4)
    errs = ad.check_gradients(lambda: OPS[name](a, b), {"a": a, "b": b})
    assert max(errs.values()) < 1e-6, errs


def test_solve_gradient():
    rng = np.random.default_rng(1)
    A = Tensor(rng.standard_normal((2, 3, 3)) + 4 * np.eye(3), requires_grad=True)
    b = _param(rng, 2, 3, 1)
    errs = ad.check_gradients(lambda: ad.tsum(ad.solve(A, b) ** 2), {"A": A, "b": b})
    assert max(errs.values()) < 1e-6


def test_prod_with_zero_factor():
    x = Tensor(np.array([[0.0, 2.0, 3.0]]), requires_grad=True)
    ad.tsum(ad.prod(x, axis=1)).backward()
    assert np.array_equal(x.grad, [[6.0, 0.0, 0.0]])


def test_log_clamp_no_nan():
    x = Tensor(np.array([0.0, -1.0, 1.0]), requires_grad=True)
    y = ad.tsum(ad.log(x))
    y.backward()
    assert np.all(np.isfinite(y.data)) and np.all(np.isfinite(x.grad))
    assert x.grad[0] == 0 and x.grad[2] == 1.0


def test_sqrt_zero_gradient():
    x = Tensor(np.zeros(3), requires_grad=True)
    ad.tsum(ad.sqrt(x)).backward()
    assert np.array_equal(x.grad, np.zeros(3))


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    (x * x + x).backward()
    assert x.grad[0] == 5.0


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with ad.no_grad():
        y = x * 3.0
    assert not y.requires_grad and y.parents == ()


def test_backward_needs_scalar():
    with pytest.raises(ValueError):
        Tensor(np.ones(2), requires_grad=True).backward()


def test_matmul_shape_errors():
    with pytest.raises(ValueError):
        ad.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        ad.einsum("ij,jk", np.ones((2, 2)), np.ones((2, 2)))


@given(arrays(np.float64, (4, 3), elements=st.floats(-5, 5)))
@settings(max_examples=30, deadline=None)
def test_linear_paths_agree(x):
    W = np.random.default_rng(0).standard_normal((2, 3))
    a = ad.linear(x, W).data
    b = ad.linear(x, W, blas=True).data
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_linear_equal_rows_bitwise():
    rng = np.random.default_rng(2)
    row = rng.standard_normal(7)
    x = np.stack([row] * 5)
    out = ad.linear(x, rng.standard_normal((4, 7))).data
    assert all(np.array_equal(out[0], out[i]) for i in range(5))


@given(arrays(np.float64, (3, 5), elements=st.floats(-30, 30)))
@settings(max_examples=30, deadline=None)
def test_softmax_is_distribution(a):
    s = ad.softmax(a, axis=0).data
    assert np.all(s >= 0)
    assert np.allclose(s.sum(axis=0), 1.0, atol=1e-12)


def test_sigmoid_extremes_finite():
    s = ad.sigmoid(np.array([-800.0, 0.0, 800.0])).data
    assert np.array_equal(s, [0.0, 0.5, 1.0])


def test_batchnorm_train_and_eval():
    bn = ad.BatchNorm(3, momentum=1.0)
    x = np.random.default_rng(0).normal(5.0, 2.0, (64, 3))
    out = bn(x, training=True).data
    assert np.allclose(out.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(out.var(axis=0), 1, atol=1e-3)
    assert np.allclose(bn(x, training=False).data, out, atol=1e-9)


def test_batchnorm_masked_statistics():
    bn = ad.BatchNorm(1, momentum=1.0)
    x = np.array([[1.0], [3.0], [100.0]])
    mask = np.array([[1.0], [1.0], [0.0]])
    out = bn(x, training=True, mask=mask).data
    assert bn.running_mean[0] == 2.0
    assert out[2, 0] == 0.0
    with pytest.raises(ValueError):
        bn(np.ones((1, 1)), training=True)


def test_batchnorm_gradient():
    rng = np.random.default_rng(3)
    bn = ad.BatchNorm(2)
    x = _param(rng, 6, 2)
    errs = ad.check_gradients(lambda: ad.tsum(ad.tanh(bn(x, training=True)) * np.arange(12.0).reshape(6, 2)),
                              {"x": x, **bn.parameters()})
    assert max(errs.values()) < 1e-5


def test_adam_minimizes_quadratic():
    w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = ad.Adam({"w": w}, lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        ad.tsum((w - 1.0) ** 2).backward()
        opt.step()
    assert np.allclose(w.data, 1.0, atol=1e-3)


def test_adam_first_step_is_lr_sign():
    w = Tensor(np.array([1.0, 1.0]), requires_grad=True)
    opt = ad.Adam({"w": w}, lr=0.01)
    opt.step({"w": np.array([5.0, -0.2])})
    assert np.allclose(w.data, [0.99, 1.01], atol=1e-8)


def test_glorot_bounds():
    W = ad.glorot(np.random.default_rng(0), 10, 6)
    assert W.shape == (10, 6) and W.requires_grad
    assert np.all(np.abs(W.data) <= np.sqrt(6 / 16))


def test_checkpoint_record_round_trip():
    arr = np.random.default_rng(0).standard_normal((2, 3))
    rec = encode(1, "W", arr)
    assert np.array_equal(decode(rec), arr)
    rec["shape"] = [4, 4]
    with pytest.raises(ValueError):
        decode(rec)


def test_relative_error_floor():
    assert ad.relative_error(np.zeros(2), np.zeros(2)) == 0.0
