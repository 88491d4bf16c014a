"""Figure rendering for finished runs: learning curves and return KDEs.

Figures are written next to the delimited outputs; the CSV files remain the
canonical record and are never modified here.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _read_csv(path: Path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def render_learning_curve(run_dir: Path) -> Path | None:
    path = run_dir / "metrics.csv"
    if not path.exists():
        return None
    header, rows = _read_csv(path)
    if not rows:
        return None
    col = {name: i for i, name in enumerate(header)}
    ep = np.asarray([int(r[col["episode"]]) for r in rows])
    q = np.asarray([float(r[col["rolling_quantile"]]) for r in rows])
    m = np.asarray([float(r[col["rolling_mean"]]) for r in rows])
    acc = [r[col["accuracy"]] for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(ep, q, label="rolling quantile")
    ax.plot(ep, m, label="rolling mean", alpha=0.7)
    ax.set_xlabel("episode")
    ax.set_ylabel("return")
    if any(acc):
        ax2 = ax.twinx()
        ax2.plot(ep, [float(a) if a else np.nan for a in acc],
                 color="tab:green", alpha=0.5, label="accuracy")
        ax2.set_ylabel("accuracy")
        ax2.set_ylim(0, 1)
    ax.legend(loc="best")
    fig.tight_layout()
    out = run_dir / "learning_curve.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_kde(run_dir: Path) -> Path | None:
    path = run_dir / "kde_data.csv"
    if not path.exists():
        return None
    header, rows = _read_csv(path)
    if not rows:
        return None
    xs = np.asarray([float(r[0]) for r in rows])
    bw = float(rows[0][1])
    fig, ax = plt.subplots(figsize=(6, 4))
    if bw > 0:
        grid = np.linspace(xs.min() - 3 * bw, xs.max() + 3 * bw, 400)
        dens = np.exp(-0.5 * ((grid[:, None] - xs[None, :]) / bw) ** 2)
        dens = dens.sum(axis=1) / (len(xs) * bw * np.sqrt(2 * np.pi))
        ax.plot(grid, dens)
        ax.fill_between(grid, dens, alpha=0.3)
    else:
        ax.hist(xs, bins=30, density=True)
    ax.set_xlabel("evaluated return")
    ax.set_ylabel("density")
    fig.tight_layout()
    out = run_dir / "return_kde.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def render_run(run_dir) -> list:
    """Render every available figure for a replication directory."""
    run_dir = Path(run_dir)
    return [p for p in (render_learning_curve(run_dir),
                        render_kde(run_dir)) if p is not None]
