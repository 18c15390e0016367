"""IQM, bootstrap intervals, and the metrics CSV."""

import csv
import json
import os

import numpy as np
import pytest
from scipy.stats import trim_mean

from segrl.metrics import (
    METRICS_COLUMNS,
    MetricsWriter,
    bootstrap_ci,
    iqm,
    write_run_info,
)


def test_iqm_worked_example():
    assert iqm([1.0, 2.0, 3.0, 4.0]) == 2.5      # trims 1 and 4


def test_iqm_small_arrays_untrimmed():
    # n < 4 trims nothing: plain mean
    assert iqm([5.0]) == 5.0
    assert iqm([1.0, 3.0]) == 2.0
    assert iqm([1.0, 2.0, 6.0]) == 3.0


def test_iqm_matches_scipy_trimmed_mean():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        vals = rng.standard_normal(n) * rng.uniform(0.1, 10)
        assert abs(iqm(vals) - trim_mean(vals, 0.25)) <= 1e-12


def test_iqm_ignores_extreme_quarter():
    vals = np.array([1e9, 2.0, 3.0, -1e9])
    assert iqm(vals) == 2.5


def test_iqm_rejects_bad_input():
    with pytest.raises(ValueError):
        iqm([])
    with pytest.raises(ValueError):
        iqm(np.zeros((2, 2)))


def test_bootstrap_ci_brackets_and_determinism():
    rng = np.random.default_rng(1)
    vals = rng.standard_normal(200)
    lo, hi = bootstrap_ci(vals, np.random.default_rng(2))
    lo2, hi2 = bootstrap_ci(vals, np.random.default_rng(2))
    assert (lo, hi) == (lo2, hi2)
    assert lo <= iqm(vals) <= hi
    # roughly symmetric interval around 0 for this sample size
    assert -0.5 < lo < hi < 0.5


def test_bootstrap_ci_constant_sample_collapses():
    lo, hi = bootstrap_ci(np.full(10, 3.25), np.random.default_rng(3))
    assert lo == 3.25 and hi == 3.25


def test_bootstrap_ci_widens_with_level():
    vals = np.random.default_rng(4).standard_normal(50)
    lo90, hi90 = bootstrap_ci(vals, np.random.default_rng(5), level=0.90)
    lo99, hi99 = bootstrap_ci(vals, np.random.default_rng(5), level=0.99)
    assert lo99 <= lo90 and hi90 <= hi99


def test_bootstrap_ci_needs_two_values():
    with pytest.raises(ValueError):
        bootstrap_ci([1.0], np.random.default_rng(0))


def row(step=1):
    return dict(step=step, env_steps=step * 40, episode=step, return_mean=-1.5,
                success_rate=0.25, critic_loss=0.125, policy_obj=-2.0,
                trust_penalty=1e-7, critic_bias=0.3, seg_len=7)


def test_csv_header_and_round_trip(tmp_path):
    path = str(tmp_path / "metrics.csv")
    with MetricsWriter(path) as w:
        w.write_row(**row(1))
        w.write_row(**row(2))
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0].keys()) == METRICS_COLUMNS
    assert len(rows) == 2
    assert int(rows[1]["step"]) == 2
    assert float(rows[0]["trust_penalty"]) == 1e-7   # repr round-trips exactly


def test_csv_append_does_not_duplicate_header(tmp_path):
    path = str(tmp_path / "metrics.csv")
    with MetricsWriter(path) as w:
        w.write_row(**row(1))
    with MetricsWriter(path) as w:                   # resume
        w.write_row(**row(2))
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    assert len(lines) == 3
    assert lines[0] == ",".join(METRICS_COLUMNS)


def test_csv_bitwise_identical_for_identical_rows(tmp_path):
    pa, pb = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    for p in (pa, pb):
        with MetricsWriter(p) as w:
            for i in range(1, 20):
                w.write_row(**row(i))
    with open(pa, "rb") as fa, open(pb, "rb") as fb:
        assert fa.read() == fb.read()


def test_csv_rejects_missing_and_extra_fields(tmp_path):
    with MetricsWriter(str(tmp_path / "m.csv")) as w:
        bad = row()
        bad.pop("critic_bias")
        with pytest.raises(ValueError):
            w.write_row(**bad)
        with pytest.raises(ValueError):
            w.write_row(**row(), wall_time=1.0)


def test_run_info_sidecar(tmp_path):
    write_run_info(str(tmp_path), wall_time=12.5, host="box")
    with open(tmp_path / "run_info.json", encoding="utf-8") as fh:
        info = json.load(fh)
    assert info == {"wall_time": 12.5, "host": "box"}
