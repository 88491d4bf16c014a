"""Simulation environments: shuffled-support bandit walk, portfolio under
geometric Brownian motion prices, and a lost-sales multi-echelon supply
chain.

All environments follow the same minimal protocol:

    obs = env.reset(rng)
    obs, reward = env.step(action)     # exactly env.horizon steps per episode

plus `obs_dim`/`obs_shape` and an action specification consumed by the
policy factory.  A single rng drives all environment noise so that a seed
fully determines a trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UsageError


class ZeroMeanEnv:
    """N alternatives; reward ~ Uniform(-s[a], s[a]); the support vector is
    reshuffled each step, so every policy has zero-mean cumulative reward.
    """

    def __init__(self, supports, horizon: int = 20):
        self.supports = np.asarray(supports, dtype=np.float64)
        if np.any(self.supports <= 0):
            raise ConfigError("support magnitudes must be positive")
        self.n = len(self.supports)
        self.horizon = horizon
        self.s = self.supports.copy()
        self.t = 0
        self._rng = None

    @property
    def obs_dim(self):
        return self.n

    def action_spec(self):
        return ("categorical", self.n)

    # Per-step reward magnitude bound (for the truncation-gap checker).
    @property
    def reward_bound(self) -> float:
        return float(self.supports.max())

    def _obs(self):
        return self.s.copy()

    def reset(self, rng: np.random.Generator):
        self._rng = rng
        self.s = rng.permutation(self.supports)
        self.t = 0
        return self._obs()

    def argmin_action(self) -> int:
        return int(np.argmin(self.s))

    def step(self, action: int):
        if not 0 <= action < self.n:
            raise UsageError(f"action {action} outside 0..{self.n - 1}")
        bound = self.s[action]
        reward = self._rng.uniform(-bound, bound)
        self.t += 1
        self.s = self._rng.permutation(self.s)
        return self._obs(), float(reward)


def gbm_step(prices: np.ndarray, mu: np.ndarray, sigma_root: np.ndarray,
             dt: float, rng: np.random.Generator,
             eps: np.ndarray | None = None) -> np.ndarray:
    """Euler-Maruyama step of multivariate geometric Brownian motion.

    dp = (mu*dt + sigma_root*sqrt(dt)*eps) elementwise-times p.  The
    per-step multiplier is floored at 1e-6 to keep prices positive.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    p = np.asarray(prices, dtype=np.float64)
    if eps is None:
        eps = rng.standard_normal(len(p))
    mult = 1.0 + mu * dt + (sigma_root @ eps) * math.sqrt(dt)
    return p * np.maximum(mult, 1e-6)


class PortfolioEnv:
    """Rebalance a long-only portfolio over simulated GBM prices.

    Actions are simplex allocations of the current total value; buys pay a
    proportional transaction fee.  Reward is the one-step change in total
    value.  Observation: positions, prices, and rolling mean/std of the
    per-asset profit margins over `margin_window` steps.
    """

    def __init__(self, mu, sigma_root, horizon: int = 100, fee: float = 0.001,
                 v0: float = 100.0, margin_window: int = 25):
        self.mu = np.asarray(mu, dtype=np.float64)
        self.sigma_root = np.asarray(sigma_root, dtype=np.float64)
        if self.sigma_root.shape != (len(self.mu), len(self.mu)):
            raise ConfigError("volatility matrix must be square in N")
        self.n = len(self.mu)
        self.horizon = horizon
        self.dt = 1.0 / horizon
        self.fee = fee
        self.v0 = v0
        self.margin_window = margin_window

    @property
    def obs_dim(self):
        return 4 * self.n

    def action_spec(self):
        return ("simplex", self.n)

    def _obs(self):
        margins = np.asarray(self.margins[-self.margin_window:])
        if len(margins):
            m_mean = margins.mean(axis=0)
            m_std = margins.std(axis=0)
        else:
            m_mean = np.zeros(self.n)
            m_std = np.zeros(self.n)
        return np.concatenate([self.w * self.p / self.v0, self.p,
                               m_mean / self.dt, m_std / math.sqrt(self.dt)])

    def reset(self, rng: np.random.Generator):
        self._rng = rng
        self.p = np.ones(self.n)
        alloc = rng.dirichlet(np.ones(self.n))
        self.w = alloc * self.v0 / self.p
        self.v = float(self.p @ self.w)
        self.margins = []
        self.t = 0
        return self._obs()

    def step(self, action):
        a = np.asarray(action, dtype=np.float64)
        if a.shape != (self.n,) or np.any(a < -1e-9) \
                or abs(a.sum() - 1.0) > 1e-6:
            raise UsageError("allocation must lie on the simplex")
        target = a * self.v / self.p
        delta = target - self.w
        w_new = self.w + (1.0 - self.fee) * np.maximum(delta, 0.0) \
            - np.maximum(-delta, 0.0)
        p_new = gbm_step(self.p, self.mu, self.sigma_root, self.dt, self._rng)
        self.margins.append((p_new - self.p) / self.p)
        v_new = float(p_new @ w_new)
        reward = v_new - self.v
        self.w = w_new
        self.p = p_new
        self.v = v_new
        self.t += 1
        return self._obs(), reward


@dataclass
class DemandModel:
    """Nonnegative integer demand generator for the supply-chain system."""

    kind: str  # "uniform" | "merton" | "periodical"
    high: int = 20
    mu: float = 5e-5
    sigma: float = 0.01
    jump_a: float = 0.0
    jump_b: float = 0.01
    scale_b: float = 10.0
    poisson_rate: float = 15.0
    saw_high: int = 7
    saw_t0: int = 6
    saw_period: int = 15
    _j: float = field(default=0.0, repr=False)

    def reset(self):
        self._j = 0.0

    def next(self, t: int, rng: np.random.Generator) -> int:
        if self.kind == "uniform":
            return int(rng.integers(0, self.high + 1))
        if self.kind == "merton":
            z = rng.standard_normal()
            n_jumps = rng.poisson(self.poisson_rate)
            z2 = rng.standard_normal()
            self._j += ((self.mu - 0.5 * self.sigma**2) + self.sigma * z
                        + self.jump_a * n_jumps
                        + self.jump_b * math.sqrt(n_jumps) * z2)
            return int(math.floor(self.scale_b * math.exp(self._j)))
        if self.kind == "periodical":
            x = int(rng.integers(0, self.saw_high + 1))
            return x + ((t + self.saw_t0) % self.saw_period)
        raise ConfigError(f"unknown demand model {self.kind!r}")


@dataclass
class EchelonSpec:
    lead_time: int
    price: float
    holding_cost: float
    lost_sale_penalty: float
    initial_inventory: float


class InventoryEnv:
    """Serial lost-sales supply chain with N controlled echelons.

    Echelon 0 is the customer, echelon N+1 the manufacturer with unlimited
    stock.  Orders placed by echelon i arrive after its lead time; unmet
    demand is lost.  Reward is the total chain profit per period.

    Observations are the (lookback, channels) history matrix of on-hand
    inventory, lost sales, shipped and ordered quantities per echelon plus
    customer demand, scaled to keep network inputs near unit range.
    """

    def __init__(self, echelons, upstream_price: float, demand: DemandModel,
                 horizon: int = 50, max_order: int = 20,
                 lookback: int | None = None, obs_scale: float = 0.05):
        self.echelons = list(echelons)
        self.n = len(self.echelons)
        self.upstream_price = upstream_price
        self.demand = demand
        self.horizon = horizon
        self.max_order = max_order
        self.lookback = lookback or max(e.lead_time for e in self.echelons)
        self.obs_scale = obs_scale
        self.n_channels = 4 * self.n + 1
        # price vector indexed 1..N+1 (p[i] is echelon i's selling price)
        self.prices = [e.price for e in self.echelons] + [upstream_price]

    @property
    def obs_shape(self):
        return (self.lookback, self.n_channels)

    def action_spec(self):
        return ("multidiscrete", self.n, self.max_order + 1)

    @property
    def reward_bound(self) -> float:
        # crude per-step profit magnitude bound for bound checkers
        worst = 0.0
        for i, e in enumerate(self.echelons):
            worst += (e.price + self.prices[i + 1]) * self.max_order \
                + e.holding_cost * 10 * self.max_order \
                + e.lost_sale_penalty * self.max_order
        return worst

    def reset(self, rng: np.random.Generator):
        self._rng = rng
        self.demand.reset()
        self.t = 0
        self.inventory = np.asarray(
            [e.initial_inventory for e in self.echelons], dtype=np.float64)
        # shipment history per echelon index 1..N+1 keyed by period
        self.ship_hist = {i: {} for i in range(1, self.n + 2)}
        self.hist = [np.zeros(self.n_channels)
                     for _ in range(self.lookback)]
        return self._obs()

    def _obs(self):
        return np.stack(self.hist[-self.lookback:]) * self.obs_scale

    def _arriving(self, i: int, t: int) -> float:
        """Shipment sent to echelon i+1 (0-indexed i) arriving this period:
        what its upstream shipped lead_time periods ago."""
        lead = self.echelons[i].lead_time
        return self.ship_hist[i + 2].get(t - lead, 0.0)

    def step(self, orders):
        orders = np.asarray(orders, dtype=np.float64)
        if orders.shape != (self.n,) or np.any(orders < 0):
            raise UsageError("orders must be nonnegative, one per echelon")
        t = self.t + 1
        demand = float(self.demand.next(t, self._rng))
        incoming = np.concatenate([[demand], orders[:-1]])
        # manufacturer ships this period's top-level order immediately
        self.ship_hist[self.n + 1][t] = float(orders[-1])
        shipped = np.zeros(self.n)
        lost = np.zeros(self.n)
        # shipments depend only on current orders and past arrivals, so a
        # single downstream-to-upstream pass is well defined
        for i in range(self.n):
            arriving = self._arriving(i, t)
            q_in = incoming[i]
            avail = self.inventory[i] + arriving
            s = q_in - max(q_in - avail, 0.0)
            u = max(q_in - s, 0.0)
            self.inventory[i] = max(self.inventory[i] + arriving - s, 0.0)
            shipped[i] = s
            lost[i] = u
            self.ship_hist[i + 1][t] = s
        profit = 0.0
        for i, e in enumerate(self.echelons):
            upstream_shipped = self.ship_hist[i + 2][t]
            profit += (e.price * shipped[i]
                       - self.prices[i + 1] * upstream_shipped
                       - e.holding_cost * self.inventory[i]
                       - e.lost_sale_penalty * lost[i])
        row = np.concatenate([self.inventory, lost, shipped, orders,
                              [demand]])
        self.hist.append(row)
        self.t = t
        return self._obs(), float(profit)
