"""Command-line interface: train, evaluate, compare, verify, report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, oracles
from .algos import Streams, clipped_surrogate
from .errors import ConfigError, UsageError
from .presets import ALGOS, ENV_PRESETS, default_config
from .quantile import QuantileTracker, StepSchedule


def _cmd_train(args):
    with open(args.config) as fh:
        cfg = json.load(fh)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = Path(args.out) if args.out else Path(
        f"runs/{cfg.get('env', 'run')}_{cfg.get('algo', '')}_s{cfg['seed']}")
    harness.run_experiment(cfg, out)
    print(f"run complete: {out}")
    return 0


def _cmd_make_config(args):
    cfg = default_config(args.env, args.algo, episodes=args.episodes,
                         seed=args.seed)
    text = json.dumps(cfg, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n")
        print(f"wrote {args.output}")
    else:
        print(text)
    return 0


def _cmd_evaluate(args):
    cfg, policy = harness.load_checkpoint(args.checkpoint)
    streams = Streams.shared(np.random.default_rng(args.seed))
    returns, _ = harness.evaluate_policy(cfg, policy, args.episodes, streams)
    alpha = cfg["alpha"]
    q = harness.order_stat_quantile(returns, alpha)
    print(f"episodes: {args.episodes}")
    print(f"{alpha}-quantile: {q:.6g}")
    print(f"mean: {returns.mean():.6g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        np.savetxt(out / "eval_returns.csv", returns, header="return",
                   comments="", fmt="%.12g")
        print(f"wrote {out / 'eval_returns.csv'}")
    return 0


def _cmd_compare(args):
    report = harness.compare_runs(args.a, args.b, args.alpha)
    print(f"alpha = {args.alpha}")
    header = f"{'run':<4}{'n':>6}{'quantile':>12}{'quantile 95% CI':>26}" \
             f"{'mean':>12}{'mean 95% CI':>26}"
    print(header)
    for key in ("a", "b"):
        r = report[key]
        qci = f"[{r['quantile_ci'][0]:.4g}, {r['quantile_ci'][1]:.4g}]"
        mci = f"[{r['mean_ci'][0]:.4g}, {r['mean_ci'][1]:.4g}]"
        print(f"{key:<4}{r['n']:>6}{r['quantile']:>12.5g}{qci:>26}"
              f"{r['mean']:>12.5g}{mci:>26}")
    return 0


def _cmd_report(args):
    from .report import render_run
    figs = render_run(args.dir)
    for f in figs:
        print(f"wrote {f}")
    if not figs:
        print("nothing to render", file=sys.stderr)
        return 1
    return 0


def _verification_checks():
    rng = np.random.default_rng(7)

    def inverse_cdf():
        assert abs(oracles.inverse_normal_cdf(0.5)) < 1e-9
        assert abs(oracles.inverse_normal_cdf(0.975) - 1.959964) < 1e-5
        return "inverse normal CDF matches reference values"

    def quantile_estimator():
        est, se = oracles.mc_quantile(rng.uniform(0, 1, 100_000), 0.3)
        assert abs(est - 0.3) < 0.01, est
        assert se > 0
        return f"MC 0.3-quantile of U(0,1) = {est:.4f}"

    def markowitz():
        from .presets import PORTFOLIO_3
        sol = oracles.markowitz_alloc(PORTFOLIO_3["mu"],
                                      PORTFOLIO_3["sigma_root"], 0.1)
        assert np.allclose(sol["mean_weights"], [0, 0, 1])
        assert np.allclose(sol["quantile_weights"], [0, 0.5, 0.5])
        assert abs(sol["quantile_objective"] - 0.12) < 1e-9
        return "grid-search allocations match the closed-form optima"

    def rolling_convention():
        q, m = harness.rolling_stats([1, 2, 3, 4], 0.25)
        assert (q, m) == (1.0, 2.5)
        return "rolling order-statistic convention holds"

    def ratio_identity():
        from .envs import ZeroMeanEnv
        from .presets import make_policy
        from .algos import importance_ratio, rollout
        env = ZeroMeanEnv([1, 4, 9])
        cfg = {"hidden": [8, 8]}
        policy = make_policy(cfg, env, np.random.default_rng(1))
        streams = Streams.shared(np.random.default_rng(2))
        traj = rollout(env, policy, streams, 0.99)
        rho = importance_ratio(traj, policy)
        assert abs(rho - 1.0) < 1e-9, rho
        return "importance ratio at identical parameters is 1"

    def clip_pessimism():
        for _ in range(200):
            r = float(rng.uniform(0, 3))
            t = float(rng.normal())
            assert clipped_surrogate(r, t, 0.2) <= r * t + 1e-12
        return "clipped surrogate never exceeds the unclipped value"

    def tracker():
        sched = StepSchedule.polynomial(0.5, 0.7)
        tr = QuantileTracker(0.5, sched)
        for x in rng.uniform(0, 1, 20_000):
            tr.sa_step(float(x))
        assert abs(tr.q - 0.5) < 0.05, tr.q
        return f"tracker reaches the U(0,1) median ({tr.q:.3f})"

    return [("inverse_normal_cdf", inverse_cdf),
            ("mc_quantile", quantile_estimator),
            ("markowitz_alloc", markowitz),
            ("rolling_stats", rolling_convention),
            ("importance_ratio_identity", ratio_identity),
            ("clip_pessimism", clip_pessimism),
            ("quantile_tracker", tracker)]


def _cmd_verify(args):
    failures = 0
    for name, check in _verification_checks():
        try:
            detail = check()
            print(f"PASS {name}: {detail}")
        except Exception as exc:  # report and keep going
            failures += 1
            print(f"FAIL {name}: {exc}")
    print(f"{failures} failure(s)" if failures else "all checks passed")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qpg",
        description="Quantile-criterion policy gradient training and "
                    "evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run an experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("make-config",
                       help="emit a preset config as JSON")
    p.add_argument("--env", required=True, choices=sorted(ENV_PRESETS))
    p.add_argument("--algo", required=True, choices=ALGOS)
    p.add_argument("--episodes", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(fn=_cmd_make_config)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("compare", help="compare two finished runs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.set_defaults(fn=_cmd_compare)

    p = sub.add_parser("verify", help="run the oracle verification suite")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("report", help="render figures for a run directory")
    p.add_argument("--dir", required=True)
    p.set_defaults(fn=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
