"""PNG figures for the CLI reports.  Uses the non-interactive Agg backend."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy import stats  # noqa: E402

from .model import forward_eval  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # Fixed metadata keeps the bytes stable across runs.
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def _step_xy(f, lo=0.0, hi=1.0):
    xs = [lo] + [t for t in f.jumps for _ in (0, 1)] + [hi]
    ys = [b for b in f.levels for _ in (0, 1)]
    return xs, ys


def plot_fit(data, kernel, fit, path, truth=None):
    """Observations, fitted forward curve and the fitted step function."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(data.x, data.y, ".", ms=2, color="0.6", label="data")
    grid = np.linspace(data.x[0], data.x[-1], 600)
    step = fit.step()
    ax.plot(grid, forward_eval(kernel, step, grid), color="C0", label="fitted mean")
    ax.plot(*_step_xy(step, data.x[0], data.x[-1]), color="C3", lw=1.5, label="fitted f")
    if truth is not None:
        ax.plot(*_step_xy(truth, data.x[0], data.x[-1]), "--", color="k", lw=1,
                label="true f")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(f"{kernel.family} kernel, k = {fit.k_hat}")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_simulation(data, kernel, truth, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(data.x, data.y, ".", ms=2, color="0.6", label="data")
    ax.plot(data.x, forward_eval(kernel, truth, data.x), color="C0", label="mean curve")
    ax.plot(*_step_xy(truth, data.x[0], data.x[-1]), "--", color="k", lw=1, label="f")
    ax.set_xlabel("x")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_rates(reports, path):
    """Median error against n on log axes with 10-90% bands and the fitted slope."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for i, rep in enumerate(reports):
        n = np.asarray(rep.n_grid, dtype=float)
        med = np.asarray(rep.median)
        ax.fill_between(n, rep.q10, rep.q90, color=f"C{i}", alpha=0.15)
        ax.plot(n, med, "o", color=f"C{i}")
        label = rep.metric
        if rep.slope is not None and math.isfinite(rep.slope):
            anchor = math.log(med[0]) - rep.slope * math.log(n[0])
            ax.plot(n, np.exp(anchor + rep.slope * np.log(n)), "-", color=f"C{i}")
            ref = math.log(med[0]) - rep.target * math.log(n[0])
            ax.plot(n, np.exp(ref + rep.target * np.log(n)), ":", color=f"C{i}")
            label += f": slope {rep.slope:.2f} (target {rep.target:.2f})"
        ax.plot([], [], "o-", color=f"C{i}", label=label)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("median error")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_coverage(report, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    idx = np.arange(len(report.coverage))
    ax.errorbar(idx, report.coverage, yerr=report.stderr, fmt="o", capsize=4)
    ax.axhspan(*report.band, color="C2", alpha=0.15, label="acceptance band")
    ax.axhline(report.level, color="k", lw=0.8, ls="--", label="nominal")
    ax.set_xticks(idx)
    ax.set_xticklabels([("b" if j % 2 == 0 else "tau") + str(j // 2 + 1) for j in idx])
    ax.set_ylim(min(report.band[0], min(report.coverage)) - 0.05, 1.01)
    ax.set_ylabel("empirical coverage")
    ax.set_title(f"n = {report.n}")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_selection(report, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(report.n_grid, report.recovery, yerr=report.stderr, fmt="o-", capsize=4)
    ax.axhline(report.min_recovery, color="k", lw=0.8, ls="--")
    ax.set_xscale("log")
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel("n")
    ax.set_ylabel(f"P(k_hat = {report.k_true})")
    return _save(fig, path)


def plot_normality(report, path):
    """Histogram of standardized estimates per parameter against N(0, 1)."""
    p = len(report.parameters)
    fig, axes = plt.subplots(1, p, figsize=(3.2 * p, 3.2), squeeze=False)
    z = np.array([r[3] for r in report.records]).reshape(-1, p) if report.records else None
    grid = np.linspace(-4, 4, 200)
    for j, ax in enumerate(axes[0]):
        if z is not None and z.size:
            ax.hist(z[:, j], bins=30, density=True, color="0.7")
        ax.plot(grid, stats.norm.pdf(grid), color="C3")
        s = report.parameters[j]
        ax.set_title(f"param {j}: mean {s['mean']:.2f}, var {s['variance']:.2f}", fontsize=8)
    return _save(fig, path)
