"""Plots package tests: stats definitions, CSV handling, figure rendering."""

import math
import os

import matplotlib

matplotlib.use("Agg")

import numpy as np
import pytest

from segplots.cli import main
from segplots.figures import curve_with_band
from segplots.runs import REQUIRED_COLUMNS, RunSet, load_run, resolve_run_specs
from segplots.stats import bootstrap_band, iqm


def write_csv(path, rows, header=REQUIRED_COLUMNS):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def fake_rows(n_rows, seed, value_fn=None):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_rows):
        ret = value_fn(i) if value_fn else rng.normal(-5.0 + 0.02 * i, 0.1)
        rows.append([
            i, (i + 1) * 40, i, ret, min(1.0, 0.01 * i),
            rng.uniform(0.1, 2.0), rng.normal(), abs(rng.normal()) * 0.01,
            rng.normal(0.0, 0.3), 10,
        ])
    return rows


def make_run_dirs(tmp_path, n_seeds=3, n_rows=20, name="dense"):
    paths = []
    for s in range(n_seeds):
        p = str(tmp_path / name / f"seed{s}" / "metrics.csv")
        write_csv(p, fake_rows(n_rows, seed=s))
        paths.append(p)
    return paths


# --- stats ---

def test_iqm_four_values():
    assert iqm([4.0, 1.0, 2.0, 3.0]) == 2.5


def test_iqm_small_arrays_untrimmed():
    assert iqm([7.0]) == 7.0
    assert iqm([1.0, 3.0]) == 2.0
    assert iqm([1.0, 2.0, 6.0]) == 3.0


def test_iqm_trims_extremes():
    vals = [1000.0, -1000.0] + [5.0] * 6
    assert iqm(vals) == 5.0


def test_iqm_rejects_empty_and_nonfinite():
    with pytest.raises(ValueError):
        iqm([])
    with pytest.raises(ValueError):
        iqm([1.0, math.nan])


def test_bootstrap_band_brackets_and_deterministic():
    vals = np.random.default_rng(3).normal(size=40)
    lo1, hi1 = bootstrap_band(vals, np.random.default_rng(7))
    lo2, hi2 = bootstrap_band(vals, np.random.default_rng(7))
    assert (lo1, hi1) == (lo2, hi2)
    assert lo1 <= iqm(vals) <= hi1


def test_bootstrap_band_single_value_zero_width():
    assert bootstrap_band([3.25], np.random.default_rng(0)) == (3.25, 3.25)


def test_bootstrap_band_constant_collapses():
    lo, hi = bootstrap_band([2.0] * 5, np.random.default_rng(0))
    assert lo == hi == 2.0


# --- runs ---

def test_load_run_roundtrip(tmp_path):
    rows = fake_rows(5, seed=0)
    p = str(tmp_path / "metrics.csv")
    write_csv(p, rows)
    data = load_run(p)
    assert set(data) == set(REQUIRED_COLUMNS)
    np.testing.assert_array_equal(data["return_mean"],
                                  [r[3] for r in rows])


def test_load_run_missing_column(tmp_path):
    p = str(tmp_path / "metrics.csv")
    header = [c for c in REQUIRED_COLUMNS if c != "critic_bias"]
    write_csv(p, [[0.0] * len(header)], header=header)
    with pytest.raises(ValueError, match="critic_bias"):
        load_run(p)


def test_load_run_empty_and_headerless(tmp_path):
    p = str(tmp_path / "empty.csv")
    open(p, "w").close()
    with pytest.raises(ValueError, match="empty"):
        load_run(p)
    p2 = str(tmp_path / "noheader.csv")
    write_csv(p2, [], header=REQUIRED_COLUMNS)
    with pytest.raises(ValueError, match="no data rows"):
        load_run(p2)


def test_runset_truncates_unequal_lengths(tmp_path):
    p1 = str(tmp_path / "a" / "metrics.csv")
    p2 = str(tmp_path / "b" / "metrics.csv")
    write_csv(p1, fake_rows(10, seed=0))
    write_csv(p2, fake_rows(6, seed=1))
    with pytest.warns(UserWarning, match="truncating to 6"):
        rs = RunSet(label="x", paths=[p1, p2])
    assert rs.column("return_mean").shape == (2, 6)


def test_runset_rejects_misaligned_steps(tmp_path):
    p1 = str(tmp_path / "a" / "metrics.csv")
    p2 = str(tmp_path / "b" / "metrics.csv")
    rows = fake_rows(5, seed=0)
    write_csv(p1, rows)
    shifted = [list(r) for r in rows]
    for r in shifted:
        r[1] += 1
    write_csv(p2, shifted)
    with pytest.raises(ValueError, match="env_steps differ"):
        RunSet(label="x", paths=[p1, p2])


def test_runset_unknown_metric(tmp_path):
    p = str(tmp_path / "a" / "metrics.csv")
    write_csv(p, fake_rows(3, seed=0))
    rs = RunSet(label="x", paths=[p])
    with pytest.raises(ValueError, match="unknown metric"):
        rs.column("wall_time")


def test_resolve_specs_labels_and_dirs(tmp_path):
    make_run_dirs(tmp_path, n_seeds=2)
    pattern = str(tmp_path / "dense" / "seed*")
    sets = resolve_run_specs([f"mylabel={pattern}"])
    assert len(sets) == 1
    assert sets[0].label == "mylabel"
    assert len(sets[0].paths) == 2
    with pytest.raises(ValueError, match="matched no metrics"):
        resolve_run_specs([str(tmp_path / "nothing*")])


# --- figures ---

def test_curve_with_band_matches_stats():
    vals = np.random.default_rng(5).normal(size=(4, 7))
    mid, lo, hi = curve_with_band(vals)
    for j in range(7):
        assert abs(mid[j] - iqm(vals[:, j])) < 1e-15
        assert lo[j] <= mid[j] <= hi[j]


def test_curve_single_seed_zero_width_band():
    vals = np.arange(5.0).reshape(1, 5)
    mid, lo, hi = curve_with_band(vals)
    np.testing.assert_array_equal(mid, vals[0])
    np.testing.assert_array_equal(lo, vals[0])
    np.testing.assert_array_equal(hi, vals[0])


def test_cli_curves_renders_png(tmp_path):
    make_run_dirs(tmp_path, n_seeds=3, n_rows=15)
    out = str(tmp_path / "curves.png")
    rc = main(["curves", "--runs", str(tmp_path / "dense" / "seed*"),
               "--metric", "return_mean", "--out", out])
    assert rc == 0
    assert os.path.getsize(out) > 1000
    with open(out, "rb") as fh:
        assert fh.read(8) == b"\x89PNG\r\n\x1a\n"


def test_cli_curves_iqm_matches_recomputation(tmp_path):
    paths = make_run_dirs(tmp_path, n_seeds=3, n_rows=10)
    rs = RunSet(label="dense", paths=paths)
    vals = rs.column("success_rate")
    mid, _, _ = curve_with_band(vals)
    for j in range(vals.shape[1]):
        expect = iqm([vals[s, j] for s in range(3)])
        assert abs(mid[j] - expect) < 1e-9


def test_cli_bias_renders(tmp_path):
    make_run_dirs(tmp_path, n_seeds=2, n_rows=8)
    out = str(tmp_path / "bias.png")
    rc = main(["bias", "--runs", str(tmp_path / "dense" / "seed*"), "--out", out])
    assert rc == 0
    assert os.path.getsize(out) > 1000


def test_cli_constant_metric_flat_line(tmp_path):
    for s in range(2):
        p = str(tmp_path / "flat" / f"seed{s}" / "metrics.csv")
        write_csv(p, fake_rows(6, seed=s, value_fn=lambda i: -1.5))
    out = str(tmp_path / "flat.png")
    rc = main(["curves", "--runs", str(tmp_path / "flat" / "seed*"),
               "--metric", "return_mean", "--out", out])
    assert rc == 0
    rs = RunSet(label="flat",
                paths=[str(tmp_path / "flat" / f"seed{s}" / "metrics.csv")
                       for s in range(2)])
    mid, lo, hi = curve_with_band(rs.column("return_mean"))
    assert np.all(mid == -1.5) and np.all(lo == -1.5) and np.all(hi == -1.5)


def test_cli_bad_glob_errors(tmp_path):
    rc = main(["curves", "--runs", str(tmp_path / "nope*"),
               "--metric", "return_mean", "--out", str(tmp_path / "x.png")])
    assert rc == 1
