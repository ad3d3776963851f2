import numpy as np
import pytest

from difftraffic import autodiff as ad


def fd_check(fn, params, atol=1e-6, rtol=1e-5, h=1e-6):
    """Compare analytic gradients of a scalar fn against central differences."""
    tensors = [ad.Tensor(p) for p in params]
    out = fn(*tensors)
    out.backward()
    for t, p in zip(tensors, params):
        grad = t.grad
        assert grad is not None and grad.shape == p.shape
        flat = p.reshape(-1)
        for i in range(flat.size):
            pp, pm = p.copy().reshape(-1), p.copy().reshape(-1)
            pp[i] += h
            pm[i] -= h
            fp = fn(*[ad.Tensor(q if q is not p else pp.reshape(p.shape))
                      for q in params]).data
            fm = fn(*[ad.Tensor(q if q is not p else pm.reshape(p.shape))
                      for q in params]).data
            fd = (float(fp) - float(fm)) / (2 * h)
            an = grad.reshape(-1)[i]
            assert abs(fd - an) <= atol + rtol * abs(fd), (fd, an, i)


def test_add_mul_broadcast():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4,))
    fd_check(lambda x, y: ad.sum_(ad.mul(ad.add(x, y), x)), [a, b])


def test_matmul_stacked():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    fd_check(lambda x, y: ad.sum_(ad.matmul(x, y)), [a, b])


def test_tanh_exp_log_sqrt():
    rng = np.random.default_rng(2)
    a = rng.uniform(0.5, 2.0, size=(6,))
    fd_check(lambda x: ad.sum_(ad.tanh(ad.log(ad.sqrt(ad.exp(x))))), [a])


def test_softmax_grad():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(2, 5))
    w = rng.normal(size=(2, 5))
    fd_check(lambda x: ad.sum_(ad.mul(ad.softmax(x, axis=-1), w)), [a])


def test_layer_norm_grad():
    rng = np.random.default_rng(4)
    x, g, b = rng.normal(size=(3, 8)), rng.normal(size=(8,)), rng.normal(size=(8,))
    w = rng.normal(size=(3, 8))
    fd_check(lambda xx, gg, bb: ad.sum_(ad.mul(ad.layer_norm(xx, gg, bb), w)),
             [x, g, b], rtol=1e-4)


def test_take_scatter_add():
    emb = np.arange(12, dtype=float).reshape(4, 3)
    t = ad.Tensor(emb)
    out = ad.sum_(ad.take(t, np.array([1, 1, 3])))
    out.backward()
    expected = np.zeros((4, 3))
    expected[1] = 2.0
    expected[3] = 1.0
    np.testing.assert_array_equal(t.grad, expected)


def test_min_reduce_ties_route_first():
    x = ad.Tensor(np.array([[2.0, 1.0, 1.0]]))
    out = ad.sum_(ad.min_reduce(x, axis=1))
    out.backward()
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_clip_zero_grad_outside():
    x = ad.Tensor(np.array([-2.0, 0.5, 2.0]))
    ad.sum_(ad.clip(x, -1.0, 1.0)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_concat_transpose_reshape():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    fd_check(
        lambda x, y: ad.sum_(ad.mul(
            ad.reshape(ad.transpose(ad.concat([x, y], axis=0), (1, 0)), (12,)),
            np.arange(12.0))),
        [a, b])


def test_where_const():
    mask = np.array([True, False, True])
    a = ad.Tensor(np.array([1.0, 2.0, 3.0]))
    b = ad.Tensor(np.array([10.0, 20.0, 30.0]))
    out = ad.sum_(ad.where_const(mask, a, b))
    out.backward()
    np.testing.assert_array_equal(a.grad, [1.0, 0.0, 1.0])
    np.testing.assert_array_equal(b.grad, [0.0, 1.0, 0.0])


def test_grad_accumulates_over_reuse():
    x = ad.Tensor(np.array([3.0]))
    y = ad.add(ad.mul(x, x), x)  # x^2 + x -> grad 2x + 1 = 7
    y.backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_mean_axis():
    x = ad.Tensor(np.ones((2, 4)))
    ad.sum_(ad.mean(x, axis=1)).backward()
    np.testing.assert_allclose(x.grad, np.full((2, 4), 0.25))
