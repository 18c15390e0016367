"""The two standard figures: learning curves and critic bias."""

from __future__ import annotations

import numpy as np

from .runs import RunSet
from .stats import bootstrap_band, iqm

CI_LEVEL = 0.95
BOOTSTRAP_RESAMPLES = 2000
BOOTSTRAP_SEED = 0


def curve_with_band(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row IQM and bootstrap band for a (n_seeds, n_rows) matrix."""
    rng = np.random.default_rng(BOOTSTRAP_SEED)
    n_rows = values.shape[1]
    mid = np.empty(n_rows)
    lo = np.empty(n_rows)
    hi = np.empty(n_rows)
    for j in range(n_rows):
        col = values[:, j]
        mid[j] = iqm(col)
        lo[j], hi[j] = bootstrap_band(col, rng,
                                      n_resamples=BOOTSTRAP_RESAMPLES, level=CI_LEVEL)
    return mid, lo, hi


def plot_learning_curves(ax, run_sets: list[RunSet], metric: str) -> None:
    """IQM over seeds vs env_steps, one line per run set, with 95% bootstrap bands."""
    for rs in run_sets:
        vals = rs.column(metric)
        mid, lo, hi = curve_with_band(vals)
        line, = ax.plot(rs.env_steps, mid, label=f"{rs.label} (n={vals.shape[0]})")
        ax.fill_between(rs.env_steps, lo, hi, alpha=0.2, color=line.get_color())
    ax.set_xlabel("environment steps")
    ax.set_ylabel(metric.replace("_", " "))
    ax.legend()
    ax.grid(True, alpha=0.3)


def plot_critic_bias(ax, run_sets: list[RunSet]) -> None:
    """Critic bias (predicted value minus Monte Carlo return) vs env_steps.

    Positive values mean the critic overestimates. The zero line is the
    calibrated reference.
    """
    for rs in run_sets:
        vals = rs.column("critic_bias")
        mid, lo, hi = curve_with_band(vals)
        line, = ax.plot(rs.env_steps, mid, label=f"{rs.label} (n={vals.shape[0]})")
        ax.fill_between(rs.env_steps, lo, hi, alpha=0.2, color=line.get_color())
    ax.axhline(0.0, color="black", linewidth=0.8, linestyle="--")
    ax.set_xlabel("environment steps")
    ax.set_ylabel("critic bias (over > 0)")
    ax.legend()
    ax.grid(True, alpha=0.3)
