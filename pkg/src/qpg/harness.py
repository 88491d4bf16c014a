"""Experiment runner: config validation, seeded replications, rolling
metrics, post-training evaluation, and artifact emission.

Artifacts per replication directory:

    metrics.csv       episode, rolling_quantile, rolling_mean, accuracy,
                      q_tracker  (no wall-clock column, so reruns with the
                      same config and seed are byte-identical)
    eval_returns.csv  one evaluated return per row (mode actions)
    eval_actions.csv  mean environment action per episode (vector heads)
    kde_data.csv      evaluation samples plus a Silverman bandwidth hint
    checkpoint.json   flat parameters, architecture header, config
    learning_curve.png / return_kde.png

A top-level manifest.json records the config, its hash, and versions.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from collections import deque
from pathlib import Path

import numpy as np

from .algos import Streams, rollout
from .errors import ConfigError, UsageError
from .presets import make_algo, make_env, make_policy
from .quantile import warm_start as order_stat_quantile

SCHEMA_VERSION = 1
STREAM_NAMES = ("init", "env", "policy", "shuffle", "warm", "eval")


def validate_config(cfg: dict):
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError("config schema_version must be "
                          f"{SCHEMA_VERSION}, got {cfg.get('schema_version')}")
    if not 0.0 < cfg["alpha"] < 1.0:
        raise ConfigError("alpha must lie strictly inside (0, 1)")
    if not 0 < cfg["t0"] <= cfg["horizon"]:
        raise ConfigError("truncation t0 must lie in [1, horizon]")
    if cfg["rolling_window"] < 1:
        raise ConfigError("rolling window must be at least 1")
    for key in ("lr", "quantile_lr", "lr_decay_factor"):
        if cfg[key] <= 0:
            raise ConfigError(f"{key} must be positive")
    if not 0.0 < cfg["eta"] < 1.0:
        raise ConfigError("discount must lie strictly inside (0, 1)")
    if cfg["episodes"] < 0 or cfg["replications"] < 1:
        raise ConfigError("episodes must be >= 0 and replications >= 1")


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def replication_streams(seed: int, rep: int) -> dict:
    """Independent named generators derived from (seed, replication)."""
    root = np.random.SeedSequence([int(seed), int(rep)])
    kids = root.spawn(len(STREAM_NAMES))
    return {n: np.random.default_rng(k) for n, k in zip(STREAM_NAMES, kids)}


def rolling_stats(window, alpha: float):
    """(order-statistic quantile at ceil(alpha*n), arithmetic mean)."""
    xs = list(window)
    return order_stat_quantile(xs, alpha), float(np.mean(xs))


def silverman_bandwidth(samples) -> float:
    xs = np.asarray(samples, dtype=np.float64)
    if len(xs) < 2:
        raise UsageError("bandwidth needs at least two samples")
    return float(1.06 * xs.std(ddof=1) * len(xs) ** (-0.2))


def emit_kde_data(returns, path) -> dict:
    """Write samples plus a Silverman bandwidth hint column."""
    bw = silverman_bandwidth(returns)
    degenerate = bw == 0.0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "bandwidth", "degenerate"])
        for x in returns:
            writer.writerow([f"{x:.12g}", f"{bw:.12g}", int(degenerate)])
    return {"bandwidth": bw, "degenerate": degenerate, "n": len(returns)}


def evaluate_policy(cfg: dict, policy, n_episodes: int, streams: Streams):
    """Mode-action evaluation; returns (returns, mean env action rows)."""
    env = make_env(cfg)
    returns = np.empty(n_episodes)
    action_rows = []
    for i in range(n_episodes):
        traj = rollout(env, policy, streams, cfg["eta"], mode=True)
        returns[i] = traj.total_return
        first = np.asarray(traj.env_actions[0], dtype=np.float64)
        if first.ndim > 0:
            action_rows.append(np.mean(
                np.asarray(traj.env_actions, dtype=np.float64), axis=0))
    return returns, action_rows


def _write_checkpoint(path, cfg, policy, episodes_done: int):
    snap = {"schema_version": SCHEMA_VERSION, "config": cfg,
            "config_hash": config_hash(cfg),
            "episodes_trained": episodes_done,
            "policy": policy.checkpoint()}
    with open(path, "w") as fh:
        json.dump(snap, fh)


def load_checkpoint(path):
    """Returns (config, restored policy)."""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"checkpoint file not found: {path}")
    with open(path) as fh:
        snap = json.load(fh)
    cfg = snap["config"]
    env = make_env(cfg)
    rng = np.random.default_rng(0)
    policy = make_policy(cfg, env, rng)
    policy.restore(snap["policy"])
    return cfg, policy


def run_replication(cfg: dict, rep: int, out_dir: Path,
                    render: bool = True) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    streams = replication_streams(cfg["seed"], rep)
    env = make_env(cfg)
    policy = make_policy(cfg, env, streams["init"])
    algo = make_algo(cfg, env, policy, streams["init"])

    t_start = time.time()
    n_episodes = cfg["episodes"]
    if n_episodes > 0 and cfg["warm_start_episodes"] > 0 \
            and hasattr(algo, "warm_start"):
        algo.warm_start(env, Streams.shared(streams["warm"]),
                        cfg["warm_start_episodes"])

    train_streams = Streams(streams["env"], streams["policy"],
                            streams["shuffle"])
    window = deque(maxlen=cfg["rolling_window"])
    last = {}
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "rolling_quantile", "rolling_mean",
                         "accuracy", "q_tracker"])
        for _ in range(n_episodes):
            rec = algo.episode(env, train_streams)
            window.append(rec.ret)
            q, m = rolling_stats(window, cfg["alpha"])
            acc = "" if rec.accuracy is None else f"{rec.accuracy:.6g}"
            qt = "" if math.isnan(rec.q_tracker) else f"{rec.q_tracker:.12g}"
            writer.writerow([rec.episode, f"{q:.12g}", f"{m:.12g}", acc, qt])
            last = {"episode": rec.episode, "rolling_quantile": q,
                    "rolling_mean": m, "accuracy": rec.accuracy,
                    "q_tracker": rec.q_tracker}

    _write_checkpoint(out_dir / "checkpoint.json", cfg, policy, n_episodes)

    eval_streams = Streams.shared(streams["eval"])
    returns, action_rows = evaluate_policy(cfg, policy,
                                           cfg["eval_episodes"], eval_streams)
    with open(out_dir / "eval_returns.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["return"])
        for x in returns:
            writer.writerow([f"{x:.12g}"])
    if action_rows:
        with open(out_dir / "eval_actions.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"a{i}" for i in range(len(action_rows[0]))])
            for row in action_rows:
                writer.writerow([f"{x:.12g}" for x in row])
    if len(returns) >= 2:
        emit_kde_data(returns, out_dir / "kde_data.csv")

    summary = {
        "replication": rep,
        "episodes": n_episodes,
        "wall_clock_seconds": time.time() - t_start,
        "final": last,
        "eval_quantile": (order_stat_quantile(returns, cfg["alpha"])
                          if len(returns) else None),
        "eval_mean": float(returns.mean()) if len(returns) else None,
        "norm_violations": getattr(algo, "norm_violations", 0),
        "skipped_updates": getattr(algo, "skipped_updates", 0),
    }
    if render:
        from .report import render_run
        render_run(out_dir)
    return summary


def run_experiment(cfg: dict, out_dir) -> Path:
    """Run every replication and write the top-level manifest."""
    validate_config(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    for rep in range(cfg["replications"]):
        rep_dir = out_dir / f"rep{rep:02d}"
        summaries.append(run_replication(cfg, rep, rep_dir))
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "versions": {"numpy": np.__version__},
        "replications": summaries,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return out_dir


def _find_eval_returns(run_dir: Path):
    run_dir = Path(run_dir)
    direct = run_dir / "eval_returns.csv"
    paths = [direct] if direct.exists() else \
        sorted(run_dir.glob("rep*/eval_returns.csv"))
    if not paths:
        raise UsageError(f"no eval_returns.csv under {run_dir}")
    out = []
    for p in paths:
        with open(p) as fh:
            rows = list(csv.reader(fh))
        out.extend(float(r[0]) for r in rows[1:])
    return np.asarray(out)


def _bootstrap_ci(samples, stat_fn, n_boot: int = 1000, level: float = 0.95,
                  seed: int = 0):
    rng = np.random.default_rng(seed)
    n = len(samples)
    stats = np.asarray([stat_fn(samples[rng.integers(0, n, size=n)])
                        for _ in range(n_boot)])
    lo = (1.0 - level) / 2.0
    return (float(np.quantile(stats, lo)),
            float(np.quantile(stats, 1.0 - lo)))


def compare_runs(dir_a, dir_b, alpha: float, n_boot: int = 1000) -> dict:
    """Two-criteria comparison table with bootstrap confidence intervals."""
    report = {"alpha": alpha}
    for key, d in (("a", dir_a), ("b", dir_b)):
        xs = _find_eval_returns(d)
        q = order_stat_quantile(xs, alpha)
        m = float(xs.mean())
        report[key] = {
            "dir": str(d), "n": len(xs),
            "quantile": q,
            "quantile_ci": _bootstrap_ci(
                xs, lambda s: order_stat_quantile(s, alpha), n_boot),
            "mean": m,
            "mean_ci": _bootstrap_ci(xs, np.mean, n_boot),
        }
    return report
