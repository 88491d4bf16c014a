"""Training algorithms: quantile-criterion policy gradient (on- and
off-policy) plus mean-criterion baselines and a perturbation-based
optimizer.

Each algorithm consumes one simulated episode per call and mutates its own
state (policy parameters, quantile tracker/bank, baselines, optimizers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import AdamState, adam_step
from .envs import ZeroMeanEnv
from .errors import ConfigError
from .policy import Baseline, BasePolicy
from .quantile import QuantileBank, QuantileTracker, StepSchedule, warm_start


@dataclass
class Streams:
    """Named independent random streams: environment noise, policy
    sampling, and horizon shuffling never share a generator, so adding a
    consumer to one stream cannot perturb the others."""

    env: np.random.Generator
    policy: np.random.Generator
    shuffle: np.random.Generator

    @staticmethod
    def shared(rng: np.random.Generator) -> "Streams":
        return Streams(rng, rng, rng)

    @staticmethod
    def from_seed(seed) -> "Streams":
        kids = np.random.SeedSequence(seed).spawn(3)
        return Streams(*(np.random.default_rng(k) for k in kids))


@dataclass
class Trajectory:
    obs: list
    actions: list
    env_actions: list
    logps: np.ndarray
    rewards: np.ndarray
    eta: float
    accuracy: float | None = None
    _prefix: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        disc = self.eta ** np.arange(len(self.rewards))
        self._prefix = np.concatenate([[0.0],
                                       np.cumsum(disc * self.rewards)])

    def prefix_return(self, l: int) -> float:
        """Discounted return of the first l steps."""
        return float(self._prefix[l])

    @property
    def total_return(self) -> float:
        return float(self._prefix[-1])

    def __len__(self):
        return len(self.rewards)


def rollout(env, policy: BasePolicy, streams: Streams, eta: float,
            mode: bool = False) -> Trajectory:
    """Simulate one full episode; records per-step behavior log densities."""
    obs = env.reset(streams.env)
    obs_list, actions, env_actions, logps, rewards = [], [], [], [], []
    hits = 0
    track_argmin = isinstance(env, ZeroMeanEnv)
    for _ in range(env.horizon):
        if track_argmin:
            best = env.argmin_action()
        if mode:
            a = policy.mode(obs)
            lp = 0.0
        else:
            a, lp = policy.act(obs, streams.policy)
        ea = policy.to_env(a)
        if track_argmin and int(ea) == best:
            hits += 1
        obs_list.append(obs)
        actions.append(a)
        env_actions.append(ea)
        logps.append(lp)
        obs, r = env.step(ea)
        rewards.append(r)
    acc = hits / env.horizon if track_argmin else None
    return Trajectory(obs_list, actions, env_actions,
                      np.asarray(logps), np.asarray(rewards), eta,
                      accuracy=acc)


def descent_direction(traj: Trajectory, policy: BasePolicy, q: float,
                      l: int | None = None) -> np.ndarray:
    """Indicator-gated negative score sum: zero when the (truncated) return
    exceeds q, else -sum of per-step scores over the first l steps."""
    l = len(traj) if l is None else l
    if traj.prefix_return(l) > q:
        return np.zeros_like(policy.theta)
    _, g = policy.grad_log_prob_sum(traj.obs[:l], traj.actions[:l])
    return -g


def importance_ratio(traj: Trajectory, policy: BasePolicy,
                     l: int | None = None) -> float:
    """Product of per-step target/behavior density ratios over the prefix.

    The behavior densities are the ones recorded at simulation time; the
    target densities are evaluated under the policy's current parameters.
    """
    l = len(traj) if l is None else l
    target = policy.log_probs(traj.obs[:l], traj.actions[:l]).sum()
    log_ratio = float(target - traj.logps[:l].sum())
    if log_ratio > 700.0:
        return math.inf
    return math.exp(log_ratio)


def clipped_surrogate(ratio: float, target: float, eps: float) -> float:
    """Pessimistic min of the unclipped and clipped ratio-weighted target."""
    if not 0.0 < eps < 1.0:
        raise ConfigError("clip parameter must lie in (0, 1)")
    clipped = min(max(ratio, 1.0 - eps), 1.0 + eps)
    return min(ratio * target, clipped * target)


def _surrogate_grad_weight(ratio: float, target: float, eps: float) -> float:
    """d/d(log-density-sum) of the clipped surrogate, divided by the score
    sum: ratio*target when the unclipped branch (or the interior of the
    clip window) is active, else zero."""
    clipped = min(max(ratio, 1.0 - eps), 1.0 + eps)
    if ratio * target <= clipped * target or (1.0 - eps) <= ratio <= (1.0 + eps):
        return ratio * target
    return 0.0


class _Ascent:
    """Projected gradient-ascent step on theta with a decaying step size."""

    def __init__(self, policy: BasePolicy, schedule: StepSchedule,
                 optimizer: str = "adam"):
        self.policy = policy
        self.schedule = schedule
        self.optimizer = optimizer
        if optimizer == "adam":
            self.adam = AdamState(lr=schedule.base)
        elif optimizer != "sgd":
            raise ConfigError(f"unknown optimizer {optimizer!r}")

    def step(self, grad: np.ndarray, k: int):
        lr = self.schedule.value(k)
        if lr == 0.0 or not np.any(grad):
            if lr == 0.0:
                return
        if self.optimizer == "adam":
            self.adam.lr_scale = lr / self.schedule.base
            self.policy.set_theta(adam_step(self.adam, self.policy.theta,
                                            grad, maximize=True))
        else:
            self.policy.set_theta(self.policy.theta + lr * grad)
        self.policy.project()


@dataclass
class EpisodeRecord:
    episode: int
    ret: float
    accuracy: float | None = None
    q_tracker: float = math.nan


class QPO:
    """Two-timescale on-policy quantile optimizer: one tracker update and
    one projected ascent step per episode."""

    def __init__(self, policy: BasePolicy, tracker: QuantileTracker,
                 policy_schedule: StepSchedule, eta: float,
                 optimizer: str = "adam"):
        self.policy = policy
        self.tracker = tracker
        self.ascent = _Ascent(policy, policy_schedule, optimizer)
        self.eta = eta
        self.k = 0
        self.norm_violations = 0

    def warm_start(self, env, streams: Streams, n_episodes: int = 32):
        returns = [rollout(env, self.policy, streams, self.eta).total_return
                   for _ in range(n_episodes)]
        self.tracker.q = warm_start(returns, self.tracker.alpha)

    def episode(self, env, streams: Streams) -> EpisodeRecord:
        traj = rollout(env, self.policy, streams, self.eta)
        q_pre = self.tracker.q
        d = descent_direction(traj, self.policy, q_pre)
        bound = len(traj) * self.policy.score_bound
        if np.linalg.norm(d) > bound * (1 + 1e-12):
            self.norm_violations += 1
        self.tracker.sa_step(traj.total_return)
        self.k += 1
        self.ascent.step(d, self.k)
        return EpisodeRecord(self.k, traj.total_return, traj.accuracy,
                             self.tracker.q)


class QPPO:
    """Off-policy accelerated variant: each simulated episode yields one
    weighted bank update and clipped-surrogate ascent per horizon in
    [t0, T], in shuffled order, with a baseline net reducing variance.

    With update_interval=None every episode is processed immediately (one
    ascent step per horizon).  With an integer update_interval, episodes
    accumulate until that many environment steps are buffered and the
    surrogate is then maximized over the whole batch with several shuffled
    minibatch epochs, proximal-style.
    """

    def __init__(self, policy: BasePolicy, bank: QuantileBank,
                 baseline: Baseline, policy_schedule: StepSchedule,
                 eta: float, clip_eps: float = 0.2,
                 optimizer: str = "adam", update_interval: int | None = None,
                 epochs: int = 10, minibatch: int = 64,
                 standardize_adv: bool = False, ratio_mode: str = "prefix"):
        if ratio_mode not in ("prefix", "step"):
            raise ConfigError("ratio_mode must be 'prefix' or 'step'")
        if update_interval is not None and update_interval < 1:
            raise ConfigError("update_interval must be a positive step count")
        if epochs < 1 or minibatch < 1:
            raise ConfigError("epochs and minibatch must be positive")
        self.policy = policy
        self.bank = bank
        self.baseline = baseline
        self.ascent = _Ascent(policy, policy_schedule, optimizer)
        self.eta = eta
        self.clip_eps = clip_eps
        self.update_interval = update_interval
        self.epochs = epochs
        self.minibatch = minibatch
        self.standardize_adv = standardize_adv
        self.ratio_mode = ratio_mode
        self.k = 0
        self.norm_violations = 0
        self.skipped_updates = 0
        self._buffer: list[Trajectory] = []
        self._buffered_steps = 0

    def warm_start(self, env, streams: Streams, n_episodes: int = 32,
                   baseline_passes: int = 0):
        trajs = [rollout(env, self.policy, streams, self.eta)
                 for _ in range(n_episodes)]
        for l in range(self.bank.t0, self.bank.t_max + 1):
            vals = [t.prefix_return(l) for t in trajs]
            self.bank.q[self.bank.index(l)] = warm_start(vals,
                                                         self.bank.alpha)
        # pre-fit the baseline toward -P(U_l <= q_l) so early advantages
        # are centered rather than uniformly non-positive
        batch = []
        for t in trajs:
            s0 = np.asarray(t.obs[0]).reshape(-1)
            for l in range(self.bank.t0, self.bank.t_max + 1):
                ind = 1.0 if t.prefix_return(l) <= self.bank.value(l) else 0.0
                batch.append((s0, l, -ind))
        for _ in range(baseline_passes):
            self.baseline.fit(batch)

    def episode(self, env, streams: Streams) -> EpisodeRecord:
        traj = rollout(env, self.policy, streams, self.eta)
        self.k += 1
        if self.update_interval is None:
            self._episode_update(traj, streams)
        else:
            self._buffer.append(traj)
            self._buffered_steps += len(traj)
            if self._buffered_steps >= self.update_interval:
                self._batch_update(self._buffer, streams)
                self._buffer = []
                self._buffered_steps = 0
        return EpisodeRecord(self.k, traj.total_return, traj.accuracy,
                             self.bank.value(self.bank.t_max))

    def _episode_update(self, traj: Trajectory, streams: Streams):
        """Process one trajectory: per shuffled horizon, one weighted bank
        update then one ascent step on the clipped surrogate."""
        s0 = np.asarray(traj.obs[0]).reshape(-1)
        horizons = streams.shuffle.permutation(
            np.arange(self.bank.t0, self.bank.t_max + 1))
        for l in horizons:
            l = int(l)
            u_l = traj.prefix_return(l)
            logp_sum, g = self.policy.grad_log_prob_sum(traj.obs[:l],
                                                        traj.actions[:l])
            ratio = math.exp(min(logp_sum - float(traj.logps[:l].sum()),
                                 700.0))
            q_pre = self.bank.value(l)
            self.bank.sa_step_weighted(l, u_l, ratio)
            indicator = 1.0 if u_l <= q_pre else 0.0
            if math.isfinite(ratio):
                target = -indicator - self.baseline.eval(s0, l)
                w = _surrogate_grad_weight(ratio, target, self.clip_eps)
                if np.linalg.norm(g) > l * self.policy.score_bound * (1 + 1e-12):
                    self.norm_violations += 1
                self.ascent.step(w * g, self.k)
            else:
                self.skipped_updates += 1
            self.baseline.fit([(s0, l, -indicator)])

    def _batch_update(self, trajs: list, streams: Streams):
        """Process a buffered batch: sequential weighted bank updates per
        (trajectory, horizon) pair, then several shuffled minibatch epochs
        of ascent on the mean clipped surrogate, refitting the baseline
        after each epoch."""
        pairs = []  # (traj index, horizon)
        for ti in range(len(trajs)):
            horizons = streams.shuffle.permutation(
                np.arange(self.bank.t0, self.bank.t_max + 1))
            pairs.extend((ti, int(l)) for l in horizons)
        # per-step log densities under the current parameters, one
        # batched forward pass per trajectory
        step_lp = [self.policy.log_probs(t.obs, t.actions) for t in trajs]
        indicators = np.zeros(len(pairs))
        advantages = np.zeros(len(pairs))
        for i, (ti, l) in enumerate(pairs):
            traj = trajs[ti]
            u_l = traj.prefix_return(l)
            log_ratio = float(step_lp[ti][:l].sum() - traj.logps[:l].sum())
            ratio = math.exp(min(log_ratio, 700.0))
            q_pre = self.bank.value(l)
            self.bank.sa_step_weighted(l, u_l, ratio)
            indicators[i] = 1.0 if u_l <= q_pre else 0.0
        for i, (ti, l) in enumerate(pairs):
            s0 = np.asarray(trajs[ti].obs[0]).reshape(-1)
            advantages[i] = -indicators[i] - self.baseline.eval(s0, l)
        if self.standardize_adv:
            std = advantages.std()
            if std > 1e-12:
                advantages = (advantages - advantages.mean()) / std
        behavior_lp = np.asarray([trajs[ti].logps[:l].sum()
                                  for ti, l in pairs])
        fit_batch = [(np.asarray(trajs[ti].obs[0]).reshape(-1), l,
                      -indicators[i]) for i, (ti, l) in enumerate(pairs)]
        n = len(pairs)
        for _ in range(self.epochs):
            order = streams.shuffle.permutation(n)
            for start in range(0, n, self.minibatch):
                idx = order[start:start + self.minibatch]
                obs, acts, seg_starts, lengths = [], [], [], []
                for i in idx:
                    ti, l = pairs[i]
                    seg_starts.append(len(obs))
                    obs.extend(trajs[ti].obs[:l])
                    acts.extend(trajs[ti].actions[:l])
                    lengths.append(l)
                lp = self.policy.log_probs(obs, acts)
                if self.ratio_mode == "prefix":
                    # one clipped term per (trajectory, horizon) pair with
                    # the full prefix-product ratio
                    pair_lp = np.add.reduceat(lp, seg_starts)
                    log_ratio = np.clip(pair_lp - behavior_lp[idx],
                                        -700, 700)
                    ratios = np.exp(log_ratio)
                    weights = np.concatenate([
                        np.full(lengths[j],
                                _surrogate_grad_weight(ratios[j],
                                                       advantages[idx[j]],
                                                       self.clip_eps)
                                / len(idx))
                        for j in range(len(idx))])
                else:
                    # one clipped term per step with that step's density
                    # ratio, each carrying its pair's advantage
                    beh_steps = np.concatenate([
                        trajs[pairs[i][0]].logps[:pairs[i][1]] for i in idx])
                    step_ratios = np.exp(np.clip(lp - beh_steps, -700, 700))
                    adv_steps = np.concatenate([
                        np.full(lengths[j], advantages[idx[j]])
                        for j in range(len(idx))])
                    weights = np.asarray([
                        _surrogate_grad_weight(r, a, self.clip_eps)
                        / len(idx)
                        for r, a in zip(step_ratios, adv_steps)])
                grad = self.policy.grad_weighted_log_prob(obs, acts, weights)
                self.ascent.step(grad, self.k)
            self.baseline.fit(fit_batch)


class Reinforce:
    """Mean-criterion likelihood-ratio baseline with reward-to-go weights."""

    def __init__(self, policy: BasePolicy, policy_schedule: StepSchedule,
                 eta: float, optimizer: str = "adam"):
        self.policy = policy
        self.ascent = _Ascent(policy, policy_schedule, optimizer)
        self.eta = eta
        self.k = 0

    def episode(self, env, streams: Streams) -> EpisodeRecord:
        traj = rollout(env, self.policy, streams, self.eta)
        rtg = _reward_to_go(traj.rewards, self.eta)
        grad = self.policy.grad_weighted_log_prob(traj.obs, traj.actions, rtg)
        self.k += 1
        self.ascent.step(grad, self.k)
        return EpisodeRecord(self.k, traj.total_return, traj.accuracy)


def _reward_to_go(rewards: np.ndarray, eta: float) -> np.ndarray:
    out = np.zeros_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + eta * acc
        out[t] = acc
    return out


class ValueNet:
    """State-value regressor for the mean-criterion surrogate baseline."""

    def __init__(self, obs_dim: int, hidden, rng, lr: float = 1e-3):
        from .nets import Network
        self.net = Network.mlp(obs_dim, hidden, [1], rng)
        self.opt = AdamState(lr=lr)

    def eval_batch(self, obs_batch) -> np.ndarray:
        from .autodiff import Tensor
        flat = np.stack([np.asarray(o).reshape(-1) for o in obs_batch])
        return self.net.forward(Tensor(flat))[0].value[:, 0]

    def fit_batch(self, obs_batch, targets) -> float:
        from .autodiff import Tensor
        flat = np.stack([np.asarray(o).reshape(-1) for o in obs_batch])
        targets = np.asarray(targets, dtype=np.float64)
        self.net.params.zero_grad()
        pred = self.net.forward(Tensor(flat))[0].reshape(len(targets))
        loss = (pred - Tensor(targets)).square().mean()
        loss.backward()
        self.net.params.theta[:] = adam_step(self.opt, self.net.params.theta,
                                             self.net.params.grad)
        return float(loss.value)


class PPO:
    """Clipped-surrogate mean-criterion baseline.

    Advantage is the discounted reward-to-go minus a state-value baseline,
    standardized per episode; several surrogate epochs reuse the episode.
    """

    def __init__(self, policy: BasePolicy, value_net: ValueNet,
                 policy_schedule: StepSchedule, eta: float,
                 clip_eps: float = 0.2, n_epochs: int = 4,
                 optimizer: str = "adam", update_interval: int | None = None,
                 minibatch: int = 64):
        if update_interval is not None and update_interval < 1:
            raise ConfigError("update_interval must be a positive step count")
        self.policy = policy
        self.value_net = value_net
        self.ascent = _Ascent(policy, policy_schedule, optimizer)
        self.eta = eta
        self.clip_eps = clip_eps
        self.n_epochs = n_epochs
        self.update_interval = update_interval
        self.minibatch = minibatch
        self.k = 0
        self._buffer: list[Trajectory] = []
        self._buffered_steps = 0

    def episode(self, env, streams: Streams) -> EpisodeRecord:
        traj = rollout(env, self.policy, streams, self.eta)
        self.k += 1
        if self.update_interval is None:
            self._update([traj], streams)
        else:
            self._buffer.append(traj)
            self._buffered_steps += len(traj)
            if self._buffered_steps >= self.update_interval:
                self._update(self._buffer, streams)
                self._buffer = []
                self._buffered_steps = 0
        return EpisodeRecord(self.k, traj.total_return, traj.accuracy)

    def _update(self, trajs: list, streams: Streams):
        obs = [o for t in trajs for o in t.obs]
        acts = [a for t in trajs for a in t.actions]
        behavior_lp = np.concatenate([t.logps for t in trajs])
        rtg = np.concatenate([_reward_to_go(t.rewards, self.eta)
                              for t in trajs])
        adv = rtg - self.value_net.eval_batch(obs)
        std = adv.std()
        if std > 1e-12:
            adv = (adv - adv.mean()) / std
        n = len(obs)
        mb = n if self.update_interval is None else self.minibatch
        for _ in range(self.n_epochs):
            order = streams.shuffle.permutation(n) \
                if self.update_interval is not None else np.arange(n)
            for start in range(0, n, mb):
                idx = order[start:start + mb]
                mb_obs = [obs[i] for i in idx]
                mb_acts = [acts[i] for i in idx]
                target_lp = self.policy.log_probs(mb_obs, mb_acts)
                log_ratio = np.clip(target_lp - behavior_lp[idx], -700, 700)
                ratios = np.exp(log_ratio)
                weights = np.asarray([
                    _surrogate_grad_weight(r, a, self.clip_eps) / len(idx)
                    for r, a in zip(ratios, adv[idx])])
                grad = self.policy.grad_weighted_log_prob(mb_obs, mb_acts,
                                                          weights)
                self.ascent.step(grad, self.k)
            self.value_net.fit_batch(obs, rtg)


@dataclass
class SpsaGains:
    a: float = 1e-3
    c: float = 0.1
    big_a: float = 100.0
    alpha_exp: float = 0.602
    gamma_exp: float = 0.101

    def a_k(self, k: int) -> float:
        return self.a / (k + 1 + self.big_a) ** self.alpha_exp

    def c_k(self, k: int) -> float:
        return self.c / (k + 1) ** self.gamma_exp


class SPSA:
    """Simultaneous-perturbation ascent on the empirical batch quantile."""

    def __init__(self, policy: BasePolicy, alpha: float, eta: float,
                 gains: SpsaGains = None, batch_size: int = 10):
        self.policy = policy
        self.alpha = alpha
        self.eta = eta
        self.gains = gains or SpsaGains()
        self.batch_size = batch_size
        self.k = 0

    def _batch_quantile(self, env, streams: Streams) -> float:
        rets = [rollout(env, self.policy, streams, self.eta).total_return
                for _ in range(self.batch_size)]
        return warm_start(rets, self.alpha)

    def episode(self, env, streams: Streams) -> EpisodeRecord:
        theta = self.policy.theta.copy()
        delta = streams.shuffle.choice([-1.0, 1.0], size=theta.shape)
        ck = self.gains.c_k(self.k)
        self.policy.set_theta(theta + ck * delta)
        q_plus = self._batch_quantile(env, streams)
        self.policy.set_theta(theta - ck * delta)
        q_minus = self._batch_quantile(env, streams)
        grad = (q_plus - q_minus) / (2.0 * ck * delta)
        self.policy.set_theta(theta + self.gains.a_k(self.k) * grad)
        self.policy.project()
        self.k += 1
        traj = rollout(env, self.policy, streams, self.eta)
        return EpisodeRecord(self.k, traj.total_return, traj.accuracy)


def spsa_minimize(f, x0, n_iters: int, gains: SpsaGains = None,
                  rng: np.random.Generator = None) -> np.ndarray:
    """Plain two-sided perturbation descent on a deterministic function."""
    gains = gains or SpsaGains(a=0.1)
    rng = rng or np.random.default_rng(0)
    x = np.asarray(x0, dtype=np.float64).copy()
    for k in range(n_iters):
        delta = rng.choice([-1.0, 1.0], size=x.shape)
        ck = gains.c_k(k)
        g = (f(x + ck * delta) - f(x - ck * delta)) / (2.0 * ck * delta)
        x -= gains.a_k(k) * g
    return x
