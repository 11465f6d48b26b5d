"""Figures for sweep and regime-report outputs. The CSV files remain the record;
these are convenience renderings written next to them."""
from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
from matplotlib import pyplot as plt  # noqa: E402

import numpy as np  # noqa: E402


def plot_sweep(result, path) -> Path:
    """Median and 1 - delta quantile error vs T on log-log axes, with the bound curve."""
    T = np.array([r.T for r in result.records], dtype=float)
    med = np.array([r.median_err for r in result.records])
    q = np.array([r.q_err for r in result.records])
    bound = np.array([r.bound_value for r in result.records])
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.loglog(T, med, "o-", label="median error")
    ax.loglog(T, q, "s--", label=f"{1 - result.config.delta:g} quantile")
    if np.any(np.isfinite(bound)):
        ax.loglog(T, bound, "k:", label="bound")
    ax.set_xlabel("T")
    ax.set_ylabel(r"$\|\hat A - A\|_{op}$")
    title = result.config.system_spec["kind"]
    if result.slope is not None:
        title += f", slope {result.slope:.3f} $\\pm$ {result.slope_ci:.3f}"
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_regimes(report, path) -> Path:
    a = np.array([r["a"] for r in report.rows])
    q = np.array([r["q_err"] for r in report.rows])
    scale = np.array([r["rate_scale"] for r in report.rows])
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.semilogy(a, q, "o-", label=f"{1 - report.delta:g} quantile error")
    ax.semilogy(a, scale, "k:", label="rate scale")
    lo = 1 - report.c * math.log(1 / report.delta) / report.T
    for x in (lo, 1 + 1 / report.T):
        ax.axvline(x, color="grey", lw=0.8)
    ax.set_xlabel("a")
    ax.set_ylabel(r"$|\hat a - a|$")
    ax.set_title(f"T = {report.T}, trials = {report.trials}")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
