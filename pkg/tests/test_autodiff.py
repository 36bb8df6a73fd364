from __future__ import annotations

import numpy as np
import pytest

import tsrag.autodiff as ad
from tsrag.autodiff import Tensor


def numeric_grad(fn, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar-valued fn at x."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + eps
        hi = fn(x)
        xf[i] = orig - eps
        lo = fn(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * eps)
    return grad


def check_grad(build, x: np.ndarray, tol: float = 1e-6):
    """Compare autodiff gradient of scalar build(Tensor) against FD."""
    t = ad.parameter(x.copy())
    out = build(t)
    assert out.data.shape == ()
    out.backward()
    expected = numeric_grad(lambda arr: float(build(ad.constant(arr)).data), x.copy())
    np.testing.assert_allclose(t.grad, expected, rtol=tol, atol=tol)


class TestForward:
    def test_arithmetic_matches_numpy(self, rng):
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        ta, tb = ad.constant(a), ad.constant(b)
        np.testing.assert_array_equal((ta + tb).data, a + b)
        np.testing.assert_array_equal((ta - tb).data, a - b)
        np.testing.assert_array_equal((ta * tb).data, a * b)
        np.testing.assert_array_equal((ta / tb).data, a / b)
        np.testing.assert_array_equal((ta**2).data, a**2)
        np.testing.assert_array_equal((-ta).data, -a)

    def test_matmul_shapes(self, rng):
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
        v = rng.standard_normal(4)
        np.testing.assert_array_equal((ad.constant(a) @ ad.constant(b)).data, a @ b)
        np.testing.assert_array_equal((ad.constant(a) @ ad.constant(v)).data, a @ v)

    def test_softmax_rows_sum_to_one(self, rng):
        x = rng.standard_normal((5, 7)) * 10.0
        s = ad.softmax_rows(ad.constant(x)).data
        np.testing.assert_allclose(s.sum(axis=1), np.ones(5), atol=1e-12)
        assert (s > 0).all()

    def test_softmax_stable_for_huge_logits(self):
        x = np.array([[1000.0, 1000.0, -1000.0]])
        s = ad.softmax_rows(ad.constant(x)).data
        assert np.isfinite(s).all()
        np.testing.assert_allclose(s[0, :2], [0.5, 0.5], atol=1e-12)

    def test_constant_graphs_carry_no_grad(self, rng):
        out = ad.constant(rng.standard_normal(4)) * 2.0
        assert not out.requires_grad
        out = out + ad.parameter(np.zeros(4))
        assert out.requires_grad


class TestGradients:
    def test_add_sub_mul_div(self, rng):
        y = rng.standard_normal((2, 3)) + 3.0
        check_grad(lambda t: ad.t_sum((t + 2.0) * ad.constant(y) - t / ad.constant(y)),
                   rng.standard_normal((2, 3)))

    def test_both_sides_of_binary_ops(self, rng):
        x = rng.standard_normal((2, 3)) + 3.0
        check_grad(lambda t: ad.t_sum(ad.constant(x) / t), rng.standard_normal((2, 3)) + 2.0)
        check_grad(lambda t: ad.t_sum(ad.constant(x) - t), rng.standard_normal((2, 3)))

    def test_power(self, rng):
        check_grad(lambda t: ad.t_sum(t**3), rng.standard_normal(5))
        check_grad(lambda t: ad.t_sum(t**2), rng.standard_normal((2, 4)))

    def test_matmul_2d_2d(self, rng):
        b = rng.standard_normal((4, 3))
        check_grad(lambda t: ad.t_sum((t @ ad.constant(b)) ** 2),
                   rng.standard_normal((2, 4)))
        a = rng.standard_normal((2, 4))
        check_grad(lambda t: ad.t_sum((ad.constant(a) @ t) ** 2),
                   rng.standard_normal((4, 3)))

    def test_matmul_2d_1d(self, rng):
        v = rng.standard_normal(4)
        check_grad(lambda t: ad.t_sum((t @ ad.constant(v)) ** 2),
                   rng.standard_normal((3, 4)))
        m = rng.standard_normal((3, 4))
        check_grad(lambda t: ad.t_sum((ad.constant(m) @ t) ** 2), rng.standard_normal(4))

    def test_transpose_reshape(self, rng):
        c = rng.standard_normal((4, 3))
        check_grad(lambda t: ad.t_sum(ad.transpose(t) * ad.constant(c)),
                   rng.standard_normal((3, 4)))
        c2 = rng.standard_normal(12)
        check_grad(lambda t: ad.t_sum(ad.reshape(t, (12,)) * ad.constant(c2)),
                   rng.standard_normal((3, 4)))

    def test_sum_mean_axes(self, rng):
        x = rng.standard_normal((3, 5))
        w = rng.standard_normal(5)
        check_grad(lambda t: ad.t_sum(ad.t_sum(t, axis=0) * ad.constant(w)), x)
        w2 = rng.standard_normal(3)
        check_grad(lambda t: ad.t_sum(ad.t_mean(t, axis=1) * ad.constant(w2)), x)
        check_grad(lambda t: ad.t_mean(t), x)
        check_grad(
            lambda t: ad.t_sum(ad.t_sum(t, axis=1, keepdims=True) * ad.constant(x)), x
        )

    def test_relu(self, rng):
        # Keep values away from the kink where FD is ill-defined.
        x = rng.standard_normal((4, 4))
        x[np.abs(x) < 0.05] = 0.1
        check_grad(lambda t: ad.t_sum(ad.relu(t) ** 2), x)

    def test_exp_sqrt(self, rng):
        check_grad(lambda t: ad.t_sum(ad.t_exp(t)), rng.standard_normal((2, 3)))
        check_grad(lambda t: ad.t_sum(ad.t_sqrt(t)), rng.uniform(0.5, 3.0, (2, 3)))

    def test_maximum_const(self, rng):
        x = rng.standard_normal(8)
        x[np.abs(x - 0.5) < 0.05] = 1.0
        check_grad(lambda t: ad.t_sum(ad.maximum_const(t, 0.5) ** 2), x)

    def test_softmax_rows(self, rng):
        c = rng.standard_normal((3, 5))
        check_grad(lambda t: ad.t_sum(ad.softmax_rows(t) * ad.constant(c)),
                   rng.standard_normal((3, 5)))

    def test_stack(self, rng):
        c = rng.standard_normal((3, 4))

        def build(t):
            rows = [mul_row for mul_row in (t * float(i + 1) for i in range(3))]
            return ad.t_sum(ad.stack(rows) * ad.constant(c))

        check_grad(build, rng.standard_normal(4))

    def test_broadcasting_row_and_scalar(self, rng):
        m = rng.standard_normal((4, 3))
        check_grad(lambda t: ad.t_sum((ad.constant(m) + t) ** 2), rng.standard_normal(3))
        check_grad(lambda t: ad.t_sum(ad.constant(m) * t), rng.standard_normal((1, 3)))

    def test_grads_accumulate_on_reuse(self, rng):
        x = rng.standard_normal(4)
        t = ad.parameter(x.copy())
        out = ad.t_sum(t * t + t)
        out.backward()
        np.testing.assert_allclose(t.grad, 2.0 * x + 1.0, atol=1e-12)

    def test_diamond_graph(self, rng):
        x = rng.standard_normal(3)
        t = ad.parameter(x.copy())
        a = t * 2.0
        b = t + 1.0
        out = ad.t_sum(a * b)
        out.backward()
        np.testing.assert_allclose(t.grad, 2.0 * (x + 1.0) + 2.0 * x, atol=1e-12)

    def test_zero_grad_resets(self, rng):
        t = ad.parameter(rng.standard_normal(3))
        ad.t_sum(t * 2.0).backward()
        first = t.grad.copy()
        t.zero_grad()
        assert t.grad is None
        ad.t_sum(t * 2.0).backward()
        np.testing.assert_array_equal(t.grad, first)

    def test_deep_chain_iterative_backward(self):
        # Deep graphs must not hit the recursion limit.
        t = ad.parameter(np.array([1.0]))
        node: Tensor = t
        for _ in range(5000):
            node = node + 0.0
        ad.t_sum(node).backward()
        np.testing.assert_array_equal(t.grad, [1.0])

    def test_composite_expression(self, rng):
        w = rng.standard_normal((3, 3))

        def build(t):
            h = ad.relu(t @ ad.constant(w))
            s = ad.softmax_rows(h + 0.3)
            return ad.t_mean(ad.t_exp(ad.t_sqrt(s + 1.0)))

        x = rng.standard_normal((2, 3))
        x[np.abs(x) < 0.05] = 0.2
        check_grad(build, x, tol=1e-5)
