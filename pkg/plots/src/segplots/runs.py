"""Loading and grouping metrics CSVs.

A "run set" is one experimental condition: the same config at several
seeds. Curves are aligned on env_steps; seeds that logged fewer rows
truncate the set to the shortest run, with a warning, so the aggregate
never mixes row counts.
"""

from __future__ import annotations

import csv
import glob
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

REQUIRED_COLUMNS = (
    "step", "env_steps", "episode", "return_mean", "success_rate",
    "critic_loss", "policy_obj", "trust_penalty", "critic_bias", "seg_len",
)


def load_run(path: str) -> dict[str, np.ndarray]:
    """Read one metrics CSV into float64 column arrays, validating the header."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise ValueError(
                f"{path}: missing columns {missing}; found {header}")
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    idx = {c: header.index(c) for c in REQUIRED_COLUMNS}
    out = {}
    for c in REQUIRED_COLUMNS:
        try:
            out[c] = np.array([float(r[idx[c]]) for r in rows], dtype=np.float64)
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}: bad value in column {c!r}: {exc}") from None
    return out


@dataclass
class RunSet:
    """Aligned curves for one condition across seeds."""

    label: str
    paths: list[str]
    runs: list[dict[str, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if not self.paths:
            raise ValueError(f"run set {self.label!r} matched no files")
        self.runs = [load_run(p) for p in self.paths]
        lengths = [len(r["env_steps"]) for r in self.runs]
        shortest = min(lengths)
        if len(set(lengths)) > 1:
            warnings.warn(
                f"run set {self.label!r}: unequal lengths {lengths}, "
                f"truncating to {shortest} rows", stacklevel=2)
            self.runs = [{c: v[:shortest] for c, v in r.items()} for r in self.runs]
        steps = self.runs[0]["env_steps"]
        for p, r in zip(self.paths[1:], self.runs[1:]):
            if not np.array_equal(r["env_steps"], steps):
                raise ValueError(
                    f"run set {self.label!r}: {p} env_steps differ from {self.paths[0]}")

    @property
    def env_steps(self) -> np.ndarray:
        return self.runs[0]["env_steps"]

    def column(self, metric: str) -> np.ndarray:
        """(n_seeds, n_rows) matrix of one metric."""
        if metric not in REQUIRED_COLUMNS:
            raise ValueError(f"unknown metric {metric!r}; choose from {REQUIRED_COLUMNS}")
        return np.stack([r[metric] for r in self.runs])


def resolve_run_specs(specs: list[str]) -> list[RunSet]:
    """Turn CLI --runs specs into run sets.

    Each spec is either GLOB (label derived from the common parent dir)
    or LABEL=GLOB. A glob matches metrics.csv files directly, or run
    directories containing one.
    """
    sets = []
    for spec in specs:
        if "=" in spec:
            label, pattern = spec.split("=", 1)
        else:
            label, pattern = "", spec
        paths = []
        for hit in sorted(glob.glob(pattern)):
            if os.path.isdir(hit):
                candidate = os.path.join(hit, "metrics.csv")
                if os.path.isfile(candidate):
                    paths.append(candidate)
            elif hit.endswith(".csv"):
                paths.append(hit)
        if not paths:
            raise ValueError(f"--runs {spec!r} matched no metrics CSVs")
        if not label:
            label = os.path.basename(os.path.dirname(os.path.commonprefix(paths))) or pattern
        sets.append(RunSet(label=label, paths=paths))
    return sets
