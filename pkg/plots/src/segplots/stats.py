"""Aggregate statistics for learning curves.

Deliberately written without reference to the trainer's implementation:
plain-Python sort and sum, so a figure value agreeing with a logged value
is evidence about the definition, not shared code.
"""

from __future__ import annotations

import math

import numpy as np


def iqm(values) -> float:
    """Interquartile mean: drop the lowest and highest floor(n/4) values, average the rest."""
    vals = [float(v) for v in np.asarray(values, dtype=np.float64).ravel()]
    if not vals:
        raise ValueError("iqm needs at least one value")
    if any(not math.isfinite(v) for v in vals):
        raise ValueError("iqm needs finite values")
    k = len(vals) // 4
    kept = sorted(vals)[k: len(vals) - k]
    return math.fsum(kept) / len(kept)


def bootstrap_band(values, rng: np.random.Generator,
                   n_resamples: int = 2000, level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval of the IQM.

    A single value has no resampling spread; the band collapses onto the
    point so single-seed curves still render.
    """
    vals = np.asarray(values, dtype=np.float64).ravel()
    if vals.size == 0:
        raise ValueError("bootstrap_band needs at least one value")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if vals.size == 1:
        v = float(vals[0])
        return v, v
    stats = np.empty(n_resamples)
    for i in range(n_resamples):
        stats[i] = iqm(vals[rng.integers(0, vals.size, size=vals.size)])
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(stats, [alpha, 1.0 - alpha])
    return float(lo), float(hi)
