"""End-to-end trainer behavior at miniature scale.

Every run here uses a deliberately tiny stack (short episodes, narrow nets,
few updates) so the whole file stays fast while still exercising the real
loop: collect, update, evaluate, log, checkpoint, resume, ablate.
"""

import dataclasses
import os

import numpy as np
import pytest

from segrl.config import RunConfig
from segrl.trainer import (ABLATION_AXES, RunState, ablation_configs,
                           collect_episode, evaluate, load_checkpoint, train)

TINY = dict(
    env="point_reacher_dense", episode_steps=10, n_basis=2, hidden=8,
    critic_layers=1, critic_heads=1, critic_dims_per_head=4,
    lr_policy=1e-3, lr_critic=1e-3, epochs_policy=1, epochs_critic=1,
    batch_size=4, rollouts_per_iter=1, learning_starts=2,
    buffer_capacity=50, total_env_steps=80, eval_episodes=2,
    seed=7,
)


def tiny_cfg(tmp_path, name="run", **overrides):
    fields = dict(TINY)
    fields.update(overrides)
    fields["out_dir"] = str(tmp_path / name)
    return RunConfig(**fields)


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


def csv_rows(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().strip().splitlines()


def test_train_writes_outputs(tmp_path):
    cfg = tiny_cfg(tmp_path)
    assert train(cfg) == 0
    out = cfg.out_dir
    rows = csv_rows(os.path.join(out, "metrics.csv"))
    # 80 steps / 10 per episode / 1 rollout per iter = 8 iterations + header
    assert len(rows) == 9
    assert rows[0].startswith("step,env_steps,")
    for fname in ("config.txt", "checkpoint.bin", "run_info.json"):
        assert os.path.exists(os.path.join(out, fname)), fname


def test_train_bitwise_determinism(tmp_path):
    cfg_a = tiny_cfg(tmp_path, "a")
    cfg_b = tiny_cfg(tmp_path, "b")
    assert train(cfg_a) == 0
    assert train(cfg_b) == 0
    a = read_bytes(os.path.join(cfg_a.out_dir, "metrics.csv"))
    b = read_bytes(os.path.join(cfg_b.out_dir, "metrics.csv"))
    assert a == b


def test_seed_changes_the_run(tmp_path):
    cfg_a = tiny_cfg(tmp_path, "a")
    cfg_b = tiny_cfg(tmp_path, "b", seed=8)
    train(cfg_a)
    train(cfg_b)
    a = read_bytes(os.path.join(cfg_a.out_dir, "metrics.csv"))
    b = read_bytes(os.path.join(cfg_b.out_dir, "metrics.csv"))
    assert a != b


def test_no_updates_before_learning_starts(tmp_path):
    cfg = tiny_cfg(tmp_path, learning_starts=1000)
    assert train(cfg) == 0
    rows = csv_rows(os.path.join(cfg.out_dir, "metrics.csv"))
    header = rows[0].split(",")
    loss_col = header.index("critic_loss")
    seg_col = header.index("seg_len")
    for row in rows[1:]:
        cells = row.split(",")
        assert float(cells[loss_col]) == 0.0
        assert float(cells[seg_col]) == 0.0


def test_resume_matches_uninterrupted(tmp_path):
    full = tiny_cfg(tmp_path, "full", total_env_steps=160)
    assert train(full) == 0

    half = tiny_cfg(tmp_path, "half", total_env_steps=80)
    assert train(half) == 0
    resumed = dataclasses.replace(half, total_env_steps=160)
    ckpt = os.path.join(half.out_dir, "checkpoint.bin")
    assert train(resumed, resume=ckpt) == 0

    a = csv_rows(os.path.join(full.out_dir, "metrics.csv"))
    b = csv_rows(os.path.join(half.out_dir, "metrics.csv"))
    assert a == b


def test_resume_rejects_different_behavior(tmp_path):
    cfg = tiny_cfg(tmp_path)
    assert train(cfg) == 0
    ckpt = os.path.join(cfg.out_dir, "checkpoint.bin")
    changed = dataclasses.replace(cfg, gamma=0.5, total_env_steps=160)
    with pytest.raises(ValueError, match="different config"):
        train(changed, resume=ckpt)


def test_eval_untrained_near_zero_success(tmp_path):
    cfg = tiny_cfg(tmp_path, learning_starts=1000)
    train(cfg)
    res = evaluate(os.path.join(cfg.out_dir, "checkpoint.bin"),
                   n_episodes=10, seed=5)
    assert res["episodes"] == 10
    assert res["success_rate"] <= 0.1
    assert np.isfinite(res["return_iqm"])


def test_eval_deterministic(tmp_path):
    cfg = tiny_cfg(tmp_path)
    train(cfg)
    ckpt = os.path.join(cfg.out_dir, "checkpoint.bin")
    r1 = evaluate(ckpt, n_episodes=4, seed=3)
    r2 = evaluate(ckpt, n_episodes=4, seed=3)
    assert r1 == r2


def test_eval_env_override_checks_state_dim(tmp_path):
    cfg = tiny_cfg(tmp_path)
    train(cfg)
    ckpt = os.path.join(cfg.out_dir, "checkpoint.bin")
    res = evaluate(ckpt, n_episodes=2, seed=0, env_name="point_reacher_sparse")
    assert res["episodes"] == 2
    with pytest.raises(ValueError, match="state dim"):
        evaluate(ckpt, n_episodes=2, seed=0, env_name="via_point_1d")


def test_collect_episode_explore_flag(tmp_path):
    state = RunState(tiny_cfg(tmp_path))
    rec1, _ = collect_episode(state, env_seed=11, explore=False)
    rec2, _ = collect_episode(state, env_seed=11, explore=False)
    np.testing.assert_array_equal(rec1.actions, rec2.actions)
    rec3, _ = collect_episode(state, env_seed=11, explore=True)
    assert not np.array_equal(rec3.actions, rec1.actions)


def test_fixed_mode_uses_whole_episode_by_default(tmp_path):
    cfg = tiny_cfg(tmp_path, segment_mode="fixed", segment_len=0)
    assert train(cfg) == 0
    rows = csv_rows(os.path.join(cfg.out_dir, "metrics.csv"))
    header = rows[0].split(",")
    seg_col = header.index("seg_len")
    seg_vals = {float(r.split(",")[seg_col]) for r in rows[1:]}
    assert seg_vals <= {0.0, float(cfg.episode_steps)}
    assert float(cfg.episode_steps) in seg_vals


def test_ablation_configs_matrix():
    cfg = RunConfig(out_dir="base")
    labels, cfgs = zip(*ablation_configs(cfg, "target_variant"))
    assert sorted(labels) == ["q_target", "v_clipped", "v_ensemble", "v_target"]
    assert len({c.out_dir for c in cfgs}) == 4
    assert all(c.out_dir.startswith("base") for c in cfgs)

    labels, cfgs = zip(*ablation_configs(cfg, "segment_mode"))
    assert labels[0] == "random"
    fixed = [c for c in cfgs if c.segment_mode == "fixed"]
    assert [c.segment_len for c in fixed] == [2, 4, 8, 20, 40]

    for axis in ABLATION_AXES:
        pairs = ablation_configs(cfg, axis)
        assert len(pairs) >= 2
        assert len({c.out_dir for _, c in pairs}) == len(pairs)

    with pytest.raises(ValueError, match="unknown ablation axis"):
        ablation_configs(cfg, "phase_of_moon")
