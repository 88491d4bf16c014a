"""Gradient and operator correctness for the reverse-mode engine."""

import numpy as np
import pytest

from qpg.autodiff import (AdamState, FlatParams, Tensor, adam_step,
                          forward_dense, forward_temporal_conv,
                          gather_log_softmax, gaussian_log_density,
                          sliding_windows)
from qpg.errors import ConfigError, TrainingError, UsageError


def fd_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    g = np.zeros_like(x)
    for i in range(x.size):
        up = x.copy()
        up.flat[i] += h
        dn = x.copy()
        dn.flat[i] -= h
        g.flat[i] = (f(up) - f(dn)) / (2.0 * h)
    return g


def check_grad(f, x, rtol=1e-4):
    """f(x) -> (scalar Tensor after backward, grad of x leaf)."""
    params = FlatParams()
    h = params.allocate(x.shape)
    params.view(h)[:] = x
    node = f(params.param_tensor(h))
    params.zero_grad()
    node.backward()
    got = params.grad_view(h).copy()

    def scalar(v):
        p2 = FlatParams()
        h2 = p2.allocate(x.shape)
        p2.view(h2)[:] = v
        return float(f(p2.param_tensor(h2)).value)

    want = fd_gradient(scalar, x.astype(np.float64))
    scale = np.maximum(np.abs(want), 1.0)
    assert np.all(np.abs(got - want) <= rtol * scale), (got, want)


class TestOps:
    def test_quadratic_gradient_analytic(self):
        # loss = theta^T theta at (1, 2) -> gradient (2, 4)
        params = FlatParams()
        h = params.allocate((2,))
        params.view(h)[:] = [1.0, 2.0]
        t = params.param_tensor(h)
        (t * t).sum().backward()
        assert np.allclose(params.grad_view(h), [2.0, 4.0])

    def test_add_sub_mul_grad(self, rng):
        x = rng.uniform(-1, 1, (3, 4))
        c = rng.uniform(-1, 1, (3, 4))
        check_grad(lambda t: ((t + Tensor(c)) * Tensor(c + 2.0)).sum(), x)
        check_grad(lambda t: ((t - Tensor(c)).square()).sum(), x)

    def test_bias_broadcast_grad(self, rng):
        b = rng.uniform(-1, 1, (4,))
        x = rng.uniform(-1, 1, (5, 4))
        check_grad(lambda t: (Tensor(x) + t).square().sum(), b)

    def test_matmul_matches_numpy(self, rng):
        a = rng.uniform(-1, 1, (3, 4))
        w = rng.uniform(-1, 1, (4, 2))
        out = Tensor(a).matmul(Tensor(w))
        assert np.allclose(out.value, a @ w)

    def test_matmul_grad(self, rng):
        a = rng.uniform(-1, 1, (3, 4))
        w = rng.uniform(-1, 1, (4, 2))
        check_grad(lambda t: Tensor(a).matmul(t).square().sum(), w)
        check_grad(lambda t: t.matmul(Tensor(w)).square().sum(), a)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ConfigError):
            Tensor(np.ones((2, 3))).matmul(Tensor(np.ones((2, 3))))

    def test_elementwise_grads(self, rng):
        x = rng.uniform(-1, 1, (6,))
        check_grad(lambda t: t.tanh().sum(), x)
        check_grad(lambda t: t.square().mean(), x)
        check_grad(lambda t: t.reshape(2, 3).sum(), x)
        xp = rng.uniform(0.1, 1, (6,))  # keep away from the relu kink
        check_grad(lambda t: t.relu().square().sum(), xp)

    def test_backward_requires_scalar(self):
        with pytest.raises(UsageError):
            Tensor(np.ones(3)).backward()

    def test_backward_linearity(self, rng):
        # gradient of a sum of independent subgraphs = sum of gradients
        x = rng.uniform(-1, 1, (4,))
        params = FlatParams()
        h = params.allocate((4,))
        params.view(h)[:] = x
        t = params.param_tensor(h)
        (t.square().sum() + t.tanh().sum()).backward()
        combined = params.grad_view(h).copy()
        params.zero_grad()
        t2 = params.param_tensor(h)
        t2.square().sum().backward()
        g1 = params.grad_view(h).copy()
        params.zero_grad()
        t3 = params.param_tensor(h)
        t3.tanh().sum().backward()
        g2 = params.grad_view(h).copy()
        assert np.allclose(combined, g1 + g2)

    def test_zero_grad_resets_exactly(self, rng):
        params = FlatParams()
        h = params.allocate((3,))
        params.view(h)[:] = rng.uniform(-1, 1, 3)
        params.param_tensor(h).square().sum().backward()
        assert np.any(params.grad != 0.0)
        params.zero_grad()
        assert np.all(params.grad == 0.0)


class TestDense:
    def test_identity_case(self):
        out = forward_dense(Tensor([[1.0, 0.0]]), Tensor(np.eye(2)),
                            Tensor(np.zeros(2)), "identity")
        assert np.allclose(out.value, [[1.0, 0.0]])

    def test_zero_input_gives_bias(self, rng):
        w = Tensor(rng.uniform(-1, 1, (2, 3)))
        b = np.array([0.5, -1.0, 2.0])
        out = forward_dense(Tensor([[0.0, 0.0]]), w, Tensor(b), "identity")
        assert np.allclose(out.value, b[None, :])

    def test_random_layer_vs_loop_oracle(self, rng):
        x = rng.uniform(-1, 1, (3, 4))
        w = rng.uniform(-1, 1, (4, 5))
        b = rng.uniform(-1, 1, (5,))
        want = np.empty((3, 5))
        for i in range(3):
            for j in range(5):
                want[i, j] = sum(x[i, k] * w[k, j] for k in range(4)) + b[j]
        out = forward_dense(Tensor(x), Tensor(w), Tensor(b), "identity")
        assert np.allclose(out.value, want)

    def test_unknown_activation(self):
        with pytest.raises(ConfigError):
            forward_dense(Tensor(np.ones((1, 2))), Tensor(np.eye(2)),
                          Tensor(np.zeros(2)), "gelu")


class TestTemporalConv:
    def test_zero_kernel(self, rng):
        x = Tensor(rng.uniform(-1, 1, (5, 2)))
        out = forward_temporal_conv(x, Tensor(np.zeros((6, 3))), 3)
        assert np.allclose(out.value, 0.0)

    def test_kernel_size_one_identity(self, rng):
        x = rng.uniform(-1, 1, (5, 2))
        out = forward_temporal_conv(Tensor(x), Tensor(np.eye(2)), 1)
        assert np.allclose(out.value, x)

    def test_sliding_dot_product_oracle(self, rng):
        x = rng.uniform(-1, 1, (5, 2))
        k = rng.uniform(-1, 1, (6, 3))
        out = forward_temporal_conv(Tensor(x), Tensor(k), 3)
        assert out.value.shape == (3, 3)
        for t in range(3):
            window = x[t:t + 3].reshape(-1)
            assert np.allclose(out.value[t], window @ k)

    def test_too_short_input(self):
        with pytest.raises(ConfigError):
            sliding_windows(Tensor(np.ones((2, 2))), 3)

    def test_window_grad(self, rng):
        x = rng.uniform(-1, 1, (5, 2))
        k = rng.uniform(-1, 1, (6, 3))
        check_grad(
            lambda t: forward_temporal_conv(t, Tensor(k), 3).square().sum(),
            x)


class TestLogDensities:
    def test_gather_log_softmax_value(self, rng):
        logits = rng.uniform(-2, 2, (4, 3))
        idx = np.array([0, 2, 1, 1])
        out = gather_log_softmax(Tensor(logits), idx)
        lse = np.log(np.exp(logits).sum(axis=1))
        want = logits[np.arange(4), idx] - lse
        assert np.allclose(out.value, want)

    def test_gather_log_softmax_grad(self, rng):
        logits = rng.uniform(-2, 2, (4, 3))
        idx = np.array([0, 2, 1, 1])
        check_grad(lambda t: gather_log_softmax(t, idx).sum(), logits)

    def test_equal_logit_softmax_grad_identity(self):
        # d log pi(a) / d logit_a = 1 - 1/n at equal logits
        n = 3
        params = FlatParams()
        h = params.allocate((1, n))
        t = params.param_tensor(h)
        gather_log_softmax(t, np.array([1])).sum().backward()
        g = params.grad_view(h)[0]
        assert np.isclose(g[1], 1.0 - 1.0 / n)
        assert np.allclose(g[[0, 2]], -1.0 / n)

    def test_gaussian_log_density_value(self, rng):
        mu = rng.uniform(-1, 1, (3, 2))
        z = rng.uniform(-1, 1, (3, 2))
        sigma = 0.5
        out = gaussian_log_density(Tensor(mu), z, sigma)
        want = (-0.5 * ((z - mu) ** 2).sum(axis=1) / sigma**2
                - np.log(2 * np.pi * sigma**2))
        assert np.allclose(out.value, want)

    def test_gaussian_log_density_grad(self, rng):
        mu = rng.uniform(-1, 1, (3, 2))
        z = rng.uniform(-1, 1, (3, 2))
        check_grad(lambda t: gaussian_log_density(t, z, 0.5).sum(), mu)


class TestAdam:
    def test_zero_grad_keeps_params(self):
        st = AdamState(lr=0.1)
        p = np.array([1.0, -2.0])
        assert np.allclose(adam_step(st, p, np.zeros(2)), p)

    def test_first_step_unit_displacement(self):
        st = AdamState(lr=0.1)
        p = np.zeros(3)
        out = adam_step(st, p, np.array([5.0, -0.3, 1e-4]))
        # bias correction makes the first step ~lr regardless of magnitude
        assert np.allclose(np.abs(out), 0.1, atol=1e-3)

    def test_converges_on_quadratic(self):
        st = AdamState(lr=0.1)
        theta = np.array([0.0])
        for _ in range(200):
            grad = 2.0 * (theta - 3.0)
            theta = adam_step(st, theta, grad)
        assert abs(theta[0] - 3.0) < 0.05

    def test_nonfinite_gradient_raises(self):
        with pytest.raises(TrainingError):
            adam_step(AdamState(lr=0.1), np.zeros(1), np.array([np.nan]))

    def test_shape_mismatch_raises(self):
        with pytest.raises(ConfigError):
            adam_step(AdamState(lr=0.1), np.zeros(2), np.zeros(3))

    def test_maximize_flips_direction(self):
        p = np.zeros(1)
        g = np.array([1.0])
        down = adam_step(AdamState(lr=0.1), p, g)
        up = adam_step(AdamState(lr=0.1), p, g, maximize=True)
        assert down[0] < 0 < up[0]


class TestFlatParams:
    def test_views_share_storage(self):
        params = FlatParams()
        h1 = params.allocate((2, 2))
        h2 = params.allocate((3,))
        params.view(h1)[:] = 1.0
        params.view(h2)[:] = 2.0
        assert params.size == 7
        assert np.allclose(params.theta, [1, 1, 1, 1, 2, 2, 2])
        params.theta[:] = 0.0
        assert np.allclose(params.view(h1), 0.0)

    def test_param_tensor_accumulates_into_flat_grad(self):
        params = FlatParams()
        h = params.allocate((2,))
        params.view(h)[:] = [3.0, 4.0]
        params.param_tensor(h).square().sum().backward()
        assert np.allclose(params.grad, [6.0, 8.0])
