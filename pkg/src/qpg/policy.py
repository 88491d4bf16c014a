"""Stochastic policies with sampling, log-densities, and score functions.

Every policy owns a flat parameter vector theta (through its Network) and
exposes:

  act(obs, rng)            -> (action, log density of the sampled action)
  log_prob_sum(obs, acts)  -> scalar graph node, sum over a batch of steps
  score(obs, action)       -> gradient of log pi w.r.t. theta
  project()                -> clamp theta into the parameter box in place

Actions are whatever the matching environment consumes, except for the
simplex head where the stored action is the Gaussian pre-image vector and
`to_env` maps it through a softmax.
"""

from __future__ import annotations

import json

import numpy as np

from .autodiff import Tensor, gather_log_softmax, gaussian_log_density
from .errors import TrainingError, UsageError
from .nets import Network

# Parameter box half-width; effectively unconstrained for the experiments
# but keeps the iterates in a compact set.
PARAM_BOX = 1.0e3
# Per-step score norm clip enforcing a finite score bound.
SCORE_BOUND = 1.0e3


def _clip_norm(vec: np.ndarray, bound: float) -> np.ndarray:
    n = float(np.linalg.norm(vec))
    if n > bound:
        return vec * (bound / n)
    return vec


class BasePolicy:
    score_bound = SCORE_BOUND

    def __init__(self, net: Network):
        self.net = net
        # feature scaling applied to observations before the network;
        # keeps raw environment observations in a range tanh units resolve
        self.obs_scale = 1.0

    def _scaled(self, obs_batch) -> np.ndarray:
        return np.asarray(obs_batch, dtype=np.float64) * self.obs_scale

    @property
    def theta(self) -> np.ndarray:
        return self.net.theta

    def set_theta(self, value: np.ndarray):
        self.net.params.theta[:] = value

    def project(self):
        """Clamp every coordinate into [-PARAM_BOX, PARAM_BOX]; idempotent."""
        np.clip(self.net.params.theta, -PARAM_BOX, PARAM_BOX,
                out=self.net.params.theta)

    def to_env(self, action):
        return action

    # -- implemented by subclasses --

    def _log_prob_node(self, obs_batch: np.ndarray, actions) -> Tensor:
        raise NotImplementedError

    def act(self, obs, rng: np.random.Generator):
        raise NotImplementedError

    def mode(self, obs):
        raise NotImplementedError

    # -- shared machinery --

    def log_prob_sum(self, obs_batch, actions) -> Tensor:
        """Graph node for sum_t log pi(a_t | s_t; theta) over the batch."""
        return self._log_prob_node(np.asarray(obs_batch), actions).sum()

    def log_probs(self, obs_batch, actions) -> np.ndarray:
        return self._log_prob_node(np.asarray(obs_batch), actions).value

    def grad_log_prob_sum(self, obs_batch, actions):
        """(sum of log densities, gradient w.r.t. theta) in one backward pass.

        The summed gradient is clipped at len(batch) * score_bound, matching
        the per-step score clip in aggregate.
        """
        self.net.params.zero_grad()
        node = self.log_prob_sum(obs_batch, actions)
        node.backward()
        g = _clip_norm(self.net.params.grad.copy(),
                       len(actions) * self.score_bound)
        return float(node.value), g

    def grad_weighted_log_prob(self, obs_batch, actions, weights
                               ) -> np.ndarray:
        """Gradient of sum_t weights[t] * log pi(a_t | s_t; theta)."""
        self.net.params.zero_grad()
        lp = self._log_prob_node(np.asarray(obs_batch), actions)
        node = (lp * Tensor(np.asarray(weights, dtype=np.float64))).sum()
        node.backward()
        return _clip_norm(self.net.params.grad.copy(),
                          len(actions) * self.score_bound)

    def score(self, obs, action) -> np.ndarray:
        """Exact gradient of log pi(action | obs; theta), norm-clipped."""
        self.net.params.zero_grad()
        node = self._log_prob_node(np.asarray(obs)[None, ...], [action]).sum()
        node.backward()
        return _clip_norm(self.net.params.grad.copy(), self.score_bound)

    def checkpoint(self) -> dict:
        return {"kind": self.kind, "arch": self.net.arch,
                "theta": self.net.theta.tolist(), "meta": self.meta(),
                "obs_scale": self.obs_scale}

    def meta(self) -> dict:
        return {}

    def restore(self, snapshot: dict):
        theta = np.asarray(snapshot["theta"], dtype=np.float64)
        if theta.shape != self.net.theta.shape:
            raise UsageError("checkpoint parameter count does not match")
        if json.dumps(snapshot["arch"]) != self.net.state_header():
            raise UsageError("checkpoint architecture header does not match")
        self.set_theta(theta)
        self.obs_scale = float(snapshot.get("obs_scale", 1.0))


class CategoricalPolicy(BasePolicy):
    """Softmax head over n discrete actions."""

    kind = "categorical"

    def __init__(self, net: Network, n_actions: int):
        super().__init__(net)
        self.n_actions = n_actions

    def _logits(self, obs_batch) -> Tensor:
        out = self.net.forward(Tensor(self._scaled(obs_batch)))
        return out[0]

    def _log_prob_node(self, obs_batch, actions) -> Tensor:
        logits = self._logits(obs_batch)
        if not np.all(np.isfinite(logits.value)):
            raise TrainingError("non-finite policy network output")
        return gather_log_softmax(logits, np.asarray(actions, dtype=np.intp))

    def probs(self, obs) -> np.ndarray:
        v = self._logits(np.asarray(obs)).value
        z = np.exp(v - v.max())
        return z / z.sum()

    def act(self, obs, rng):
        p = self.probs(obs)
        a = int(rng.choice(self.n_actions, p=p))
        return a, float(np.log(p[a]))

    def mode(self, obs):
        return int(np.argmax(self.probs(obs)))

    def meta(self):
        return {"n_actions": self.n_actions}


class MultiDiscretePolicy(BasePolicy):
    """Parallel categorical heads, one per controlled echelon."""

    kind = "multidiscrete"

    def __init__(self, net: Network, n_heads: int, n_levels: int):
        super().__init__(net)
        self.n_heads = n_heads
        self.n_levels = n_levels

    def _log_prob_node(self, obs_batch, actions) -> Tensor:
        heads = self.net.forward(Tensor(self._scaled(obs_batch)))
        acts = np.asarray(actions, dtype=np.intp)  # (B, n_heads)
        total = None
        for i, logits in enumerate(heads):
            if not np.all(np.isfinite(logits.value)):
                raise TrainingError("non-finite policy network output")
            lp = gather_log_softmax(logits, acts[..., i])
            total = lp if total is None else total + lp
        return total

    def _head_probs(self, obs):
        heads = self.net.forward(Tensor(self._scaled(obs)))
        out = []
        for logits in heads:
            v = logits.value
            z = np.exp(v - v.max())
            out.append(z / z.sum())
        return out

    def act(self, obs, rng):
        action = []
        logp = 0.0
        for p in self._head_probs(obs):
            a = int(rng.choice(self.n_levels, p=p))
            action.append(a)
            logp += float(np.log(p[a]))
        return np.asarray(action, dtype=np.intp), logp

    def mode(self, obs):
        return np.asarray([int(np.argmax(p)) for p in self._head_probs(obs)],
                          dtype=np.intp)

    def meta(self):
        return {"n_heads": self.n_heads, "n_levels": self.n_levels}


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class SimplexPolicy(BasePolicy):
    """Simplex-valued actions via a Gaussian-perturbed logit vector.

    The network emits location logits mu; the stored action is the Gaussian
    sample z ~ N(mu, sigma^2 I) and the environment receives softmax(z).
    Log densities are computed on the Gaussian pre-image, which keeps the
    likelihood-ratio machinery exact.
    """

    kind = "simplex"

    def __init__(self, net: Network, n_assets: int, sigma: float = 0.2):
        super().__init__(net)
        self.n_assets = n_assets
        self.sigma = sigma

    def _mu(self, obs_batch) -> Tensor:
        out = self.net.forward(Tensor(self._scaled(obs_batch)))
        return out[0]

    def _log_prob_node(self, obs_batch, actions) -> Tensor:
        mu = self._mu(obs_batch)
        if not np.all(np.isfinite(mu.value)):
            raise TrainingError("non-finite policy network output")
        return gaussian_log_density(mu, np.asarray(actions), self.sigma)

    def act(self, obs, rng):
        mu = self._mu(np.asarray(obs)).value
        z = mu + self.sigma * rng.standard_normal(self.n_assets)
        diff = z - mu
        logp = (-0.5 * float(diff @ diff) / self.sigma**2
                - 0.5 * self.n_assets * np.log(2 * np.pi * self.sigma**2))
        return z, logp

    def mode(self, obs):
        return self._mu(np.asarray(obs)).value.copy()

    def to_env(self, action):
        return softmax(np.asarray(action))

    def meta(self):
        return {"n_assets": self.n_assets, "sigma": self.sigma}


class GaussianMeanPolicy(BasePolicy):
    """One-parameter toy policy: action ~ N(theta, sigma^2), scalar theta.

    Used for the convex single-parameter test problems where the analytic
    optimum is known.
    """

    kind = "gaussian_mean"

    def __init__(self, sigma: float = 1.0, theta0: float = 0.0,
                 box: float = 1.0):
        net = Network()
        h = net.params.allocate((1,))
        net.params.view(h)[:] = theta0
        self._h = h
        super().__init__(net)
        self.sigma = sigma
        self.box = box

    def project(self):
        np.clip(self.net.params.theta, -self.box, self.box,
                out=self.net.params.theta)

    def _log_prob_node(self, obs_batch, actions) -> Tensor:
        mu = self.net.params.param_tensor(self._h)
        acts = np.asarray(actions, dtype=np.float64).reshape(-1, 1)
        ones = Tensor(np.ones((len(acts), 1)))
        return gaussian_log_density(ones.matmul(mu.reshape(1, 1)), acts,
                                    self.sigma)

    def act(self, obs, rng):
        mu = float(self.theta[0])
        a = mu + self.sigma * rng.standard_normal()
        logp = (-0.5 * (a - mu) ** 2 / self.sigma**2
                - 0.5 * np.log(2 * np.pi * self.sigma**2))
        return a, logp

    def mode(self, obs):
        return float(self.theta[0])


class Baseline:
    """Scalar regressor B(s0, horizon | w) used by the off-policy surrogate.

    Inputs are the flattened initial observation plus the horizon index
    scaled by 1/T.  Trained by single adaptive-moment steps on squared
    error against targets in [-1, 0].
    """

    def __init__(self, obs_dim: int, horizon: int, hidden, rng,
                 lr: float = 1e-3):
        from .autodiff import AdamState
        self.horizon = max(horizon, 1)
        self.net = Network.mlp(obs_dim + 1, hidden, [1], rng)
        self.opt = AdamState(lr=lr)

    def _features(self, s0, l) -> np.ndarray:
        s0 = np.asarray(s0, dtype=np.float64).reshape(-1)
        return np.concatenate([s0, [l / self.horizon]])

    def eval(self, s0, l: int) -> float:
        out = self.net.forward(Tensor(self._features(s0, l)))[0]
        return float(out.value[0])

    def fit(self, batch) -> float:
        """One optimizer step on the mean-squared error; returns the loss."""
        if not batch:
            return 0.0
        feats = np.stack([self._features(s0, l) for s0, l, _ in batch])
        targets = np.asarray([t for _, _, t in batch], dtype=np.float64)
        self.net.params.zero_grad()
        pred = self.net.forward(Tensor(feats))[0].reshape(len(batch))
        loss = (pred - Tensor(targets)).square().mean()
        loss.backward()
        from .autodiff import adam_step
        self.net.params.theta[:] = adam_step(self.opt, self.net.params.theta,
                                             self.net.params.grad)
        return float(loss.value)
