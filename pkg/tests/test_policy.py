"""Policy sampling, score functions, projection, and checkpoints."""

import numpy as np
import pytest

from conftest import small_categorical, tiny_softmax_policy
from qpg.errors import UsageError
from qpg.nets import Network
from qpg.policy import (Baseline, GaussianMeanPolicy, MultiDiscretePolicy,
                        PARAM_BOX, SCORE_BOUND, SimplexPolicy, softmax)


def fd_score(policy, obs, action, h=1e-6):
    theta0 = policy.theta.copy()
    g = np.zeros_like(theta0)
    for i in range(theta0.size):
        for sign, bucket in ((1, "up"), (-1, "dn")):
            t = theta0.copy()
            t[i] += sign * h
            policy.set_theta(t)
            lp = float(policy.log_probs([obs], [action])[0])
            if sign == 1:
                up = lp
            else:
                g[i] = (up - lp) / (2 * h)
    policy.set_theta(theta0)
    return g


class TestCategorical:
    def test_probs_sum_to_one(self, rng):
        policy = small_categorical(4, seed=3, obs_dim=2)
        for _ in range(20):
            p = policy.probs(rng.uniform(-5, 5, 2))
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.all(p >= 0)

    def test_equal_logits_log_density(self):
        policy = tiny_softmax_policy(3, seed=0)
        policy.set_theta(np.zeros_like(policy.theta))
        a, lp = policy.act(np.ones(1), np.random.default_rng(0))
        assert abs(lp - np.log(1.0 / 3.0)) < 1e-12

    def test_sampling_frequencies_match_probs(self, rng):
        policy = small_categorical(3, seed=1)
        obs = np.ones(1)
        p = policy.probs(obs)
        n = 100_000
        counts = np.zeros(3)
        for _ in range(n):
            a, _ = policy.act(obs, rng)
            counts[a] += 1
        freq = counts / n
        se = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(freq - p) <= 3 * se + 1e-9)

    def test_log_probs_match_probs(self, rng):
        policy = small_categorical(3, seed=2, obs_dim=2)
        obs = rng.uniform(-1, 1, 2)
        p = policy.probs(obs)
        lps = policy.log_probs([obs] * 3, [0, 1, 2])
        assert np.allclose(np.exp(lps), p)

    def test_score_matches_finite_difference(self, rng):
        policy = tiny_softmax_policy(3, seed=4)
        obs = np.ones(1)
        got = policy.score(obs, 1)
        want = fd_score(policy, obs, 1)
        assert np.allclose(got, want, atol=1e-5)

    def test_score_mean_zero_identity(self, rng):
        policy = tiny_softmax_policy(3, seed=5)
        obs = np.ones(1)
        p = policy.probs(obs)
        total = sum(p[a] * policy.score(obs, a) for a in range(3))
        assert np.allclose(total, 0.0, atol=1e-10)

    def test_mode_is_argmax(self, rng):
        policy = small_categorical(4, seed=6, obs_dim=2)
        obs = rng.uniform(-1, 1, 2)
        assert policy.mode(obs) == int(np.argmax(policy.probs(obs)))


class TestBounds:
    def test_score_norm_bounded(self, rng):
        policy = small_categorical(3, seed=7)
        # blow up the parameters so raw scores could be huge
        policy.set_theta(rng.uniform(-PARAM_BOX, PARAM_BOX,
                                     policy.theta.shape))
        for _ in range(10):
            g = policy.score(rng.uniform(-3, 3, 1), int(rng.integers(3)))
            assert np.linalg.norm(g) <= SCORE_BOUND * (1 + 1e-12)

    def test_batch_grad_bounded_by_length(self, rng):
        policy = small_categorical(3, seed=8)
        policy.set_theta(rng.uniform(-PARAM_BOX, PARAM_BOX,
                                     policy.theta.shape))
        obs = [rng.uniform(-3, 3, 1) for _ in range(5)]
        acts = [int(rng.integers(3)) for _ in range(5)]
        _, g = policy.grad_log_prob_sum(obs, acts)
        assert np.linalg.norm(g) <= 5 * SCORE_BOUND * (1 + 1e-12)

    def test_project_idempotent_and_clamps(self, rng):
        policy = small_categorical(3, seed=9)
        theta = rng.uniform(-2 * PARAM_BOX, 2 * PARAM_BOX,
                            policy.theta.shape)
        policy.set_theta(theta)
        policy.project()
        once = policy.theta.copy()
        assert np.all(np.abs(once) <= PARAM_BOX)
        inside = np.abs(theta) <= PARAM_BOX
        assert np.allclose(once[inside], theta[inside])
        policy.project()
        assert np.array_equal(once, policy.theta)


class TestGradWeighted:
    def test_matches_weighted_sum_of_scores(self, rng):
        policy = small_categorical(3, seed=10)
        obs = [rng.uniform(-1, 1, 1) for _ in range(4)]
        acts = [int(rng.integers(3)) for _ in range(4)]
        w = rng.uniform(-1, 1, 4)
        got = policy.grad_weighted_log_prob(obs, acts, w)
        want = sum(w[i] * policy.score(obs[i], acts[i]) for i in range(4))
        assert np.allclose(got, want, atol=1e-10)

    def test_log_prob_sum_matches_individual(self, rng):
        policy = small_categorical(3, seed=11)
        obs = [rng.uniform(-1, 1, 1) for _ in range(4)]
        acts = [int(rng.integers(3)) for _ in range(4)]
        total = float(policy.log_prob_sum(obs, acts).value)
        parts = policy.log_probs(obs, acts)
        assert abs(total - parts.sum()) < 1e-12


class TestSimplex:
    def _policy(self, seed=0):
        rng = np.random.default_rng(seed)
        net = Network.mlp(4, [8], [3], rng)
        return SimplexPolicy(net, 3, sigma=0.3)

    def test_env_action_on_simplex(self, rng):
        policy = self._policy()
        for _ in range(10):
            a, lp = policy.act(rng.uniform(-1, 1, 4), rng)
            ea = policy.to_env(a)
            assert np.all(ea >= 0)
            assert abs(ea.sum() - 1.0) < 1e-9

    def test_log_density_matches_formula(self, rng):
        policy = self._policy(1)
        obs = rng.uniform(-1, 1, 4)
        a, lp = policy.act(obs, rng)
        mu = policy.mode(obs)
        want = (-0.5 * np.sum((a - mu) ** 2) / 0.3**2
                - 1.5 * np.log(2 * np.pi * 0.3**2))
        assert abs(lp - want) < 1e-9
        assert abs(float(policy.log_probs([obs], [a])[0]) - want) < 1e-9

    def test_score_matches_finite_difference(self, rng):
        policy = self._policy(2)
        obs = rng.uniform(-1, 1, 4)
        a, _ = policy.act(obs, rng)
        got = policy.score(obs, a)
        want = fd_score(policy, obs, a)
        assert np.allclose(got, want, atol=1e-4)


class TestMultiDiscrete:
    def _policy(self, seed=0):
        rng = np.random.default_rng(seed)
        net = Network.temporal_conv(3, 5, [6], 3, [4, 4], rng)
        return MultiDiscretePolicy(net, 2, 4)

    def test_log_prob_is_sum_over_heads(self, rng):
        policy = self._policy()
        obs = rng.uniform(-1, 1, (3, 5))
        a, lp = policy.act(obs, rng)
        probs = policy._head_probs(obs)
        want = sum(np.log(probs[i][a[i]]) for i in range(2))
        assert abs(lp - want) < 1e-12
        assert abs(float(policy.log_probs([obs], [a])[0]) - want) < 1e-12

    def test_mode_per_head(self, rng):
        policy = self._policy(1)
        obs = rng.uniform(-1, 1, (3, 5))
        m = policy.mode(obs)
        probs = policy._head_probs(obs)
        assert np.array_equal(m, [int(np.argmax(p)) for p in probs])


class TestGaussianMean:
    def test_density_and_score(self, rng):
        policy = GaussianMeanPolicy(sigma=0.7, theta0=0.2)
        a, lp = policy.act(None, rng)
        want = (-0.5 * (a - 0.2) ** 2 / 0.7**2
                - 0.5 * np.log(2 * np.pi * 0.7**2))
        assert abs(lp - want) < 1e-12
        g = policy.score(np.zeros(1), a)
        assert abs(g[0] - (a - 0.2) / 0.7**2) < 1e-9

    def test_box_projection(self):
        policy = GaussianMeanPolicy(box=1.0)
        policy.set_theta(np.array([5.0]))
        policy.project()
        assert policy.theta[0] == 1.0


class TestCheckpoint:
    def test_roundtrip_includes_obs_scale(self, rng):
        policy = small_categorical(3, seed=12, obs_dim=2)
        policy.obs_scale = 0.25
        snap = policy.checkpoint()
        other = small_categorical(3, seed=99, obs_dim=2)
        other.restore(snap)
        assert np.array_equal(other.theta, policy.theta)
        assert other.obs_scale == 0.25
        obs = rng.uniform(-1, 1, 2)
        assert np.allclose(other.probs(obs), policy.probs(obs))

    def test_arch_mismatch_raises(self):
        policy = small_categorical(3, seed=13)
        snap = policy.checkpoint()
        other = small_categorical(3, seed=13, hidden=(16,))
        with pytest.raises(UsageError):
            other.restore(snap)

    def test_size_mismatch_raises(self):
        policy = small_categorical(3, seed=14)
        snap = policy.checkpoint()
        snap = dict(snap, theta=snap["theta"][:-1])
        other = small_categorical(3, seed=14)
        with pytest.raises(UsageError):
            other.restore(snap)


class TestBaseline:
    def test_loss_decreases_on_constant_targets(self, rng):
        base = Baseline(3, 10, [8], rng, lr=0.01)
        batch = [(rng.uniform(-1, 1, 3), 5, -0.5) for _ in range(16)]
        losses = [base.fit(batch) for _ in range(100)]
        assert losses[-1] < losses[0]
        pred = base.eval(batch[0][0], 5)
        assert abs(pred - (-0.5)) < 0.05

    def test_empty_batch_is_noop(self, rng):
        base = Baseline(3, 10, [8], rng)
        theta = base.net.theta.copy()
        assert base.fit([]) == 0.0
        assert np.array_equal(base.net.theta, theta)

    def test_output_finite_on_grid(self, rng):
        base = Baseline(2, 20, [8], rng)
        for l in (16, 18, 20):
            for _ in range(5):
                assert np.isfinite(base.eval(rng.uniform(-9, 9, 2), l))


def test_softmax_helper(rng):
    z = rng.uniform(-5, 5, (4, 3))
    s = softmax(z)
    assert np.allclose(s.sum(axis=1), 1.0)
    assert np.all(s > 0)
