"""Independent reference computations used for verification.

Everything here deliberately avoids the training code paths: quantiles come
from order statistics, gradients from finite differences, and the portfolio
reference allocation from a brute-force grid search, so the oracles can
cross-check the learned components.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import ConfigError

# Rational approximation coefficients for the inverse standard normal CDF
# (relative error below 1.15e-9 over (0, 1)).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def inverse_normal_cdf(p: float) -> float:
    """Quantile function of the standard normal distribution."""
    if not 0.0 < p < 1.0:
        raise ConfigError("probability must lie strictly inside (0, 1)")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q
                  + _C[4]) * q + _C[5])
                / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    if p > 1.0 - _P_LOW:
        return -inverse_normal_cdf(1.0 - p)
    q = p - 0.5
    r = q * q
    return ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r
              + _A[4]) * r + _A[5]) * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r
                + _B[4]) * r + 1.0))


def mc_quantile(samples, alpha: float, n_boot: int = 200,
                rng: np.random.Generator = None):
    """Empirical alpha-quantile (order statistic at ceil(alpha*n)) with a
    bootstrap standard error.  Returns (estimate, se)."""
    xs = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(xs)
    if n == 0:
        raise ConfigError("mc_quantile needs at least one sample")
    idx = max(int(math.ceil(alpha * n)), 1) - 1
    est = float(xs[idx])
    rng = rng or np.random.default_rng(0)
    boots = np.sort(xs[rng.integers(0, n, size=(n_boot, n))], axis=1)[:, idx]
    return est, float(boots.std(ddof=1))


def fd_cdf_gradient(sample_fn, theta: np.ndarray, r: float, n_samples: int,
                    h: float, seed: int = 0) -> np.ndarray:
    """Central-difference estimate of d/dtheta P(return <= r).

    `sample_fn(theta, rng)` must draw one return.  Each coordinate's two
    evaluations reuse the same random stream (common random numbers), so the
    difference isolates the parameter effect.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    for i in range(len(theta)):
        up = theta.copy()
        up[i] += h
        down = theta.copy()
        down[i] -= h
        rng_u = np.random.default_rng(seed)
        rng_d = np.random.default_rng(seed)
        cdf_u = np.mean([sample_fn(up, rng_u) <= r
                         for _ in range(n_samples)])
        cdf_d = np.mean([sample_fn(down, rng_d) <= r
                         for _ in range(n_samples)])
        grad[i] = (cdf_u - cdf_d) / (2.0 * h)
    return grad


def _simplex_grid(n: int, step: float):
    """All points of the n-simplex on a grid of the given resolution."""
    m = int(round(1.0 / step))
    if n == 3:
        i = np.arange(m + 1)
        a, b = np.meshgrid(i, i, indexing="ij")
        mask = a + b <= m
        a, b = a[mask], b[mask]
        w = np.stack([a, b, m - a - b], axis=1) / m
        return w
    pts = []
    for combo in itertools.combinations_with_replacement(range(n), m):
        counts = np.bincount(combo, minlength=n)
        pts.append(counts / m)
    return np.asarray(pts)


def markowitz_alloc(mu, sigma_root, alpha: float, step: float = 1e-3,
                    horizon_scale: float = 1.0):
    """Reference single-period allocations by grid search on the simplex.

    Returns a dict with the quantile-criterion optimum (location-plus-
    z_alpha-times-spread objective) and the mean-criterion optimum.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sig = np.asarray(sigma_root, dtype=np.float64)
    w = _simplex_grid(len(mu), step)
    means = w @ mu
    spreads = np.linalg.norm(w @ sig.T, axis=1)
    z = inverse_normal_cdf(alpha)
    q_obj = means + z * math.sqrt(horizon_scale) * spreads
    iq = int(np.argmax(q_obj))
    im = int(np.argmax(means))
    return {
        "quantile_weights": w[iq], "quantile_objective": float(q_obj[iq]),
        "mean_weights": w[im], "mean_objective": float(means[im]),
        "mean_weights_quantile_objective": float(q_obj[im]),
    }


def truncation_gap_bound(l: int, eta: float, reward_bound: float) -> float:
    """Tail-mass bound on |q^l - q^T|: eta^l * C_r / (1 - eta)."""
    if not 0.0 < eta < 1.0:
        raise ConfigError("discount must lie strictly inside (0, 1)")
    return eta ** l * reward_bound / (1.0 - eta)


def truncation_gap_check(bank_values: dict, q_full: float, eta: float,
                         reward_bound: float, slack: float = 1.0):
    """Compare per-horizon quantile estimates against the full-horizon one.

    `bank_values` maps horizon l to the estimate q^l.  Returns the list of
    horizons whose gap exceeds slack * bound(l)."""
    violations = []
    for l, q_l in bank_values.items():
        bound = truncation_gap_bound(l, eta, reward_bound)
        if abs(q_l - q_full) > slack * bound + 1e-12:
            violations.append(int(l))
    return violations


def enumerate_small_mdp(action_probs, reward_fn, horizon: int,
                        n_actions: int, eta: float = 1.0):
    """Exact outcome distribution of a tiny deterministic-reward MDP.

    `action_probs(t, history)` gives the action distribution at step t;
    `reward_fn(t, a)` the deterministic reward.  Yields
    (probability, discounted return, action tuple) over all action paths.
    """
    out = []
    for path in itertools.product(range(n_actions), repeat=horizon):
        prob = 1.0
        ret = 0.0
        for t, a in enumerate(path):
            prob *= action_probs(t, path[:t])[a]
            ret += eta ** t * reward_fn(t, a)
        out.append((prob, ret, path))
    return out


def exact_quantile_from_distribution(outcomes, alpha: float) -> float:
    """Smallest r with P(return <= r) >= alpha, from (prob, return) pairs."""
    pairs = sorted((r, p) for p, r, *_ in outcomes)
    acc = 0.0
    for r, p in pairs:
        acc += p
        if acc >= alpha - 1e-12:
            return float(r)
    return float(pairs[-1][0])
