"""Run statistics and the metrics CSV.

IQM (interquartile mean) trims floor(n/4) values from each sorted end and
averages the rest; the bootstrap CI resamples values with replacement and
takes percentiles of the resampled IQMs. Both are deterministic under a
seeded generator so figures are reproducible bit for bit.

The CSV deliberately carries no wall-clock column: rows must be bitwise
identical across runs of the same seed, and time is not. Wall time goes to a
run_info.json sidecar instead.
"""

from __future__ import annotations

import json
import os
import time

import numpy as np

METRICS_COLUMNS = (
    "step", "env_steps", "episode", "return_mean", "success_rate",
    "critic_loss", "policy_obj", "trust_penalty", "critic_bias", "seg_len",
)


def iqm(values) -> float:
    """Mean of the middle half: floor(n/4) trimmed from each sorted end."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("iqm needs a nonempty 1-D array")
    k = values.size // 4
    trimmed = np.sort(values)[k: values.size - k]
    return float(trimmed.mean())


def bootstrap_ci(values, rng: np.random.Generator,
                 n_resamples: int = 2000, level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval of the IQM statistic."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ValueError("bootstrap_ci needs at least two values")
    stats = np.empty(n_resamples)
    for i in range(n_resamples):
        stats[i] = iqm(values[rng.integers(0, values.size, size=values.size)])
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(stats, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


class MetricsWriter:
    """Append-only CSV with one flushed line per row (crash leaves prior rows intact)."""

    def __init__(self, path: str):
        self.path = path
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        fresh = not (os.path.exists(path) and os.path.getsize(path) > 0)
        self._fh = open(path, "a", encoding="utf-8")
        if fresh:
            self._fh.write(",".join(METRICS_COLUMNS) + "\n")
            self._fh.flush()
        self._start = time.monotonic()

    def write_row(self, **fields) -> None:
        missing = [c for c in METRICS_COLUMNS if c not in fields]
        extra = [k for k in fields if k not in METRICS_COLUMNS]
        if missing or extra:
            raise ValueError(f"metrics row mismatch: missing {missing}, extra {extra}")
        line = ",".join(_fmt(fields[c]) for c in METRICS_COLUMNS)
        self._fh.write(line + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_run_info(out_dir: str, **info) -> None:
    """Sidecar for everything that may differ between identical-seed runs."""
    path = os.path.join(out_dir, "run_info.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")
