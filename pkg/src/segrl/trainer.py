"""Training loop, evaluation, and ablation launcher.

One outer iteration: collect whole episodes by tracking a sampled primitive
trajectory, push them into the replay buffer, then run the critic and policy
update epochs on segment batches, move the target critics by polyak
averaging, evaluate with the mean action, and append one metrics row.

Determinism contract: with a fixed config and seed the metrics CSV is
bitwise reproducible, and a checkpoint restores every piece of state that
influences it (parameters, optimizer moments, buffer contents, rng streams,
counters), so a resumed run continues exactly where the original would have.
"""

from __future__ import annotations

import dataclasses
import json
import os
import time

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .config import RunConfig
from .critic import TransformerCritic, polyak_update
from .envs import make_env
from .metrics import MetricsWriter, iqm, write_run_info
from .optim import Adam, NonFiniteGradientError
from .policy import GaussianPolicy, PolicyOutput, ema_update_old_policy, \
    project_trust_region, sample_reparameterized
from .prodmp import build_bases, generate_batch_full
from .replay import ReplayBuffer, TrajectoryRecord
from .segments import TARGET_VARIANTS, critic_bias_diagnostic, critic_loss, \
    draw_segment_length, policy_objective, split_segments

RNG_STREAMS = ("rollout", "update", "diag")
EVAL_SEED_BLOCK = 500_000     # eval episodes use seed*1e6 + block + k
CHECKPOINT_NAME = "checkpoint.bin"

_ZERO_UPDATE = {"critic_loss": 0.0, "policy_obj": 0.0, "trust_penalty": 0.0,
                "critic_bias": 0.0, "seg_len": 0.0}


class RunState:
    """Everything a run owns; reconstructable bit for bit from a checkpoint."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.env = make_env(cfg.env, cfg.episode_steps, cfg.dt)
        spec = self.env.spec
        self.mp_cfg = cfg.mp_config(spec.n_dof)
        self.bases = build_bases(self.mp_cfg)

        init_rng = np.random.default_rng(cfg.seed)
        self.policy = GaussianPolicy(spec.state_dim, self.mp_cfg.n_params,
                                     cfg.hidden, init_rng, init_std=cfg.init_sigma,
                                     min_std=cfg.min_sigma)
        self.old_policy = self.policy.clone()
        ccfg = cfg.critic_config()
        ext_dim = spec.state_dim + 2 * spec.n_dof
        self.critics = [TransformerCritic(ext_dim, spec.n_dof, ccfg, init_rng,
                                          name=f"critic{i}")
                        for i in range(cfg.n_critics)]
        self.targets = [c.clone(f"target{i}") for i, c in enumerate(self.critics)]

        self.opt_policy = Adam(self.policy.parameters(), cfg.lr_policy)
        self.opt_critic = Adam([p for c in self.critics for p in c.parameters()],
                               cfg.lr_critic)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        seqs = np.random.SeedSequence(cfg.seed).spawn(len(RNG_STREAMS))
        self.rngs = {name: np.random.default_rng(seq)
                     for name, seq in zip(RNG_STREAMS, seqs)}
        self.iteration = 0
        self.env_steps = 0
        self.episode = 0

    def named_parameters(self):
        for group in (self.policy.parameters(), self.old_policy.parameters()):
            yield from group
        for net in (*self.critics, *self.targets):
            yield from net.parameters()

    def critic_parameters(self):
        return [p for c in self.critics for p in c.parameters()]


# -- episodes -----------------------------------------------------------------

def collect_episode(state: RunState, env_seed: int, explore: bool):
    """Track one sampled (or mean, for eval) primitive trajectory to the end.

    The behavior distribution is the trust-region-projected policy (the
    projection layer is part of the policy, so rollouts, evaluation, and
    updates all see the same distribution). Returns (record, success flag).
    Only exploration consumes the rollout rng, so evaluations never perturb
    the stream.
    """
    env = state.env
    s0 = env.reset(env_seed)
    d = env.spec.n_dof
    init_pos = s0[:d].copy()
    init_vel = s0[d: 2 * d].copy()
    bounds = state.cfg.trust_bounds()
    with T.inference_mode():
        out = state.policy.forward(s0)
        if bounds is not None:
            old_raw = state.old_policy.forward(s0)
            out = project_trust_region(
                PolicyOutput(out.mu.data, out.chol.data),
                PolicyOutput(old_raw.mu.data, old_raw.chol.data), bounds)
    mu = np.asarray(out.mu.data if hasattr(out.mu, "data") else out.mu)[0]
    chol = np.asarray(out.chol.data if hasattr(out.chol, "data") else out.chol)[0]
    if explore:
        eps = state.rngs["rollout"].standard_normal(mu.shape)
        w = sample_reparameterized(PolicyOutput(mu[None], chol[None]), eps[None])[0]
    else:
        w = mu
    pos, vel = generate_batch_full(state.bases, w[None], init_pos[None], init_vel[None])
    states, rewards = env.rollout(pos[0, 1:], vel[0, 1:])
    record = TrajectoryRecord(
        states=states, actions=pos[0, 1:].copy(), action_vels=vel[0, 1:].copy(),
        rewards=rewards, init_pos=init_pos, init_vel=init_vel,
        mu_old=mu.copy(), chol_old=chol.copy(), seed=env_seed)
    return record, env.success(states[-1])


def evaluate_policy(state: RunState, n_episodes: int, seed_base: int):
    """Mean-action episodes on a fixed goal set; (returns array, success rate)."""
    returns = np.empty(n_episodes)
    successes = 0
    for k in range(n_episodes):
        record, success = collect_episode(state, seed_base + k, explore=False)
        returns[k] = record.rewards.sum()
        successes += success
    return returns, successes / n_episodes


# -- update phase ----------------------------------------------------------------

def _segment_length(state: RunState) -> int:
    cfg = state.cfg
    if cfg.segment_mode == "random":
        return draw_segment_length(state.rngs["update"], cfg.episode_steps)
    return cfg.fixed_segment_len()


def run_updates(state: RunState) -> dict:
    """One iteration's critic and policy epochs; returns mean diagnostics."""
    cfg = state.cfg
    bounds = cfg.trust_bounds()
    opts = cfg.target_options()
    rng = state.rngs["update"]
    seg_lens: list[int] = []
    crit_vals: list[float] = []
    pol_vals: list[float] = []
    pen_vals: list[float] = []

    for _ in range(cfg.epochs_critic):
        trajs = state.buffer.sample(cfg.batch_size, rng)
        L = _segment_length(state)
        batch = split_segments(trajs, L, cfg.gamma)
        state.opt_critic.zero_grad()
        loss, info = critic_loss(batch, state.critics, state.targets,
                                 state.policy, state.old_policy, bounds, opts,
                                 state.bases, state.mp_cfg, rng)
        T.backward(loss)
        state.opt_critic.step()
        T.reset_graph()
        crit_vals.append(info["critic_loss"])
        seg_lens.append(L)

    frozen_critics = state.critic_parameters()
    for _ in range(cfg.epochs_policy):
        trajs = state.buffer.sample(cfg.batch_size, rng)
        L = _segment_length(state)
        batch = split_segments(trajs, L, cfg.gamma)
        state.opt_policy.zero_grad()
        with T.frozen(frozen_critics):
            loss, info = policy_objective(batch, state.critics, state.policy,
                                          state.old_policy, bounds,
                                          state.bases, rng,
                                          segment_ic=cfg.policy_ic == "segment")
            T.backward(loss)
        state.opt_policy.step()
        T.reset_graph()
        ema_update_old_policy(state.policy.parameters(),
                              state.old_policy.parameters(), cfg.ema_rate)
        pol_vals.append(info["policy_obj"])
        pen_vals.append(info["trust_penalty"])
        seg_lens.append(L)

    for live, target in zip(state.critics, state.targets):
        polyak_update(live.parameters(), target.parameters(), cfg.rho)

    diag_trajs = state.buffer.sample(min(16, len(state.buffer)), state.rngs["diag"])
    bias = critic_bias_diagnostic(diag_trajs, state.critics[0], cfg.gamma,
                                  max(1, cfg.episode_steps // 4))
    return {"critic_loss": float(np.mean(crit_vals)),
            "policy_obj": float(np.mean(pol_vals)) if pol_vals else 0.0,
            "trust_penalty": float(np.mean(pen_vals)) if pen_vals else 0.0,
            "critic_bias": bias,
            "seg_len": float(np.mean(seg_lens)) if seg_lens else 0.0}


# -- checkpointing -----------------------------------------------------------------

def save_checkpoint(state: RunState, path: str) -> None:
    arrays = {p.name: p.data for p in state.named_parameters()}
    arrays.update(state.opt_policy.state_arrays("adam_policy"))
    arrays.update(state.opt_critic.state_arrays("adam_critic"))
    buffer_seeds = []
    for i, tr in enumerate(state.buffer):
        for field in ("states", "actions", "action_vels", "rewards",
                      "init_pos", "init_vel", "mu_old", "chol_old"):
            arrays[f"buffer/{i}/{field}"] = getattr(tr, field)
        buffer_seeds.append(tr.seed)
    meta = {
        "config": dataclasses.asdict(state.cfg),
        "iteration": state.iteration,
        "env_steps": state.env_steps,
        "episode": state.episode,
        "adam_policy_t": state.opt_policy.t,
        "adam_critic_t": state.opt_critic.t,
        "buffer_seeds": buffer_seeds,
        "buffer_next": state.buffer._next,
        "buffer_total_pushed": state.buffer.total_pushed,
        "rng": {name: state.rngs[name].bit_generator.state for name in RNG_STREAMS},
    }
    ckpt.save(path, arrays, meta)


def load_checkpoint(path: str) -> RunState:
    if not os.path.exists(path):
        raise ckpt.CheckpointError(f"no checkpoint at {path}")
    arrays, meta = ckpt.load(path)
    state = RunState(RunConfig(**meta["config"]))
    for p in state.named_parameters():
        p.data[...] = arrays[p.name].reshape(p.data.shape)
    state.opt_policy.load_state_arrays("adam_policy", arrays, meta["adam_policy_t"])
    state.opt_critic.load_state_arrays("adam_critic", arrays, meta["adam_critic_t"])
    for i, seed in enumerate(meta["buffer_seeds"]):
        state.buffer._items.append(TrajectoryRecord(
            states=arrays[f"buffer/{i}/states"],
            actions=arrays[f"buffer/{i}/actions"],
            action_vels=arrays[f"buffer/{i}/action_vels"],
            rewards=arrays[f"buffer/{i}/rewards"],
            init_pos=arrays[f"buffer/{i}/init_pos"],
            init_vel=arrays[f"buffer/{i}/init_vel"],
            mu_old=arrays[f"buffer/{i}/mu_old"],
            chol_old=arrays[f"buffer/{i}/chol_old"],
            seed=int(seed)))
    state.buffer._next = meta["buffer_next"]
    state.buffer.total_pushed = meta["buffer_total_pushed"]
    for name in RNG_STREAMS:
        state.rngs[name].bit_generator.state = meta["rng"][name]
    state.iteration = meta["iteration"]
    state.env_steps = meta["env_steps"]
    state.episode = meta["episode"]
    return state


# -- entry points -----------------------------------------------------------------

def _behavior_keys(cfg: RunConfig) -> dict:
    """Config fields that shape per-iteration computation; the rest (stop
    horizon, checkpoint cadence, output dir) may differ across a resume."""
    flat = cfg.to_flat()
    for free in ("total_env_steps", "checkpoint_every", "out_dir"):
        flat.pop(free)
    return flat


def train(cfg: RunConfig, resume: str | None = None) -> int:
    """Run to total_env_steps; 0 on success, 1 on a non-finite abort."""
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    if resume is not None:
        state = load_checkpoint(resume)
        if _behavior_keys(state.cfg) != _behavior_keys(cfg):
            raise ValueError("resume checkpoint was written by a different config")
        state.cfg = cfg          # stop horizon / cadence / out_dir may change
    else:
        state = RunState(cfg)
        with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
            for key, value in cfg.to_flat().items():
                fh.write(f"{key} = {value}\n")

    metrics = MetricsWriter(os.path.join(out_dir, "metrics.csv"))
    ckpt_path = os.path.join(out_dir, CHECKPOINT_NAME)
    eval_base = cfg.seed * 1_000_000 + EVAL_SEED_BLOCK
    t_start = time.monotonic()
    try:
        while state.env_steps < cfg.total_env_steps:
            state.iteration += 1
            for _ in range(cfg.rollouts_per_iter):
                env_seed = cfg.seed * 1_000_000 + state.episode
                record, _ = collect_episode(state, env_seed, explore=True)
                state.buffer.push(record)
                state.episode += 1
                state.env_steps += cfg.episode_steps

            if len(state.buffer) >= cfg.learning_starts:
                agg = run_updates(state)
            else:
                agg = dict(_ZERO_UPDATE)

            returns, success_rate = evaluate_policy(state, cfg.eval_episodes,
                                                    eval_base)
            metrics.write_row(step=state.iteration, env_steps=state.env_steps,
                              episode=state.episode,
                              return_mean=float(returns.mean()),
                              success_rate=success_rate, **agg)
            if cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
                save_checkpoint(state, ckpt_path)
    except (FloatingPointError, NonFiniteGradientError,
            np.linalg.LinAlgError) as exc:
        # LinAlgError: a collapsed covariance breaks the old-policy Cholesky
        _dump_abort(state, out_dir, exc)
        metrics.close()
        return 1
    save_checkpoint(state, ckpt_path)
    write_run_info(out_dir, wall_time=time.monotonic() - t_start,
                   iterations=state.iteration, env_steps=state.env_steps,
                   episodes=state.episode)
    metrics.close()
    return 0


def _dump_abort(state: RunState, out_dir: str, exc: Exception) -> None:
    """Enough context to reproduce a blow-up without the full checkpoint."""
    norms = {p.name: float(np.max(np.abs(p.data)))
             for p in state.named_parameters()}
    info = {"error": str(exc), "type": type(exc).__name__,
            "iteration": state.iteration, "env_steps": state.env_steps,
            "episode": state.episode, "max_abs_parameter": norms}
    with open(os.path.join(out_dir, "abort.json"), "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=2, sort_keys=True)
        fh.write("\n")


def evaluate(ckpt_path: str, n_episodes: int = 20, seed: int = 0,
             env_name: str | None = None) -> dict:
    """Deterministic mean-action evaluation of a checkpointed policy."""
    state = load_checkpoint(ckpt_path)
    if env_name is not None and env_name != state.cfg.env:
        candidate = make_env(env_name, state.cfg.episode_steps, state.cfg.dt)
        if candidate.spec.state_dim != state.env.spec.state_dim:
            raise ValueError(
                f"{env_name} has state dim {candidate.spec.state_dim}, "
                f"checkpoint expects {state.env.spec.state_dim}")
        state.env = candidate
    records = []
    returns = np.empty(n_episodes)
    successes = 0
    for k in range(n_episodes):
        record, success = collect_episode(state, seed * 1_000_000 + k,
                                          explore=False)
        records.append(record)
        returns[k] = record.rewards.sum()
        successes += success
    bias = critic_bias_diagnostic(records, state.critics[0], state.cfg.gamma,
                                  max(1, state.cfg.episode_steps // 4))
    return {"episodes": n_episodes,
            "return_iqm": iqm(returns),
            "return_mean": float(returns.mean()),
            "success_rate": successes / n_episodes,
            "critic_bias": bias}


# -- ablations -----------------------------------------------------------------

ABLATION_AXES = ("target_variant", "segment_mode", "layer_norm", "dropout",
                 "trust_region", "init_cond", "target_network")
SEGMENT_MODE_FRACTIONS = (0.05, 0.10, 0.20, 0.50, 1.00)


def ablation_configs(cfg: RunConfig, axis: str) -> list[tuple[str, RunConfig]]:
    """The config matrix for one ablation axis, each in its own out subdir."""
    def variant(label: str, **changes) -> tuple[str, RunConfig]:
        out = os.path.join(cfg.out_dir, f"{axis}={label}")
        return label, dataclasses.replace(cfg, out_dir=out, **changes)

    if axis == "target_variant":
        return [variant(v, target_variant=v) for v in TARGET_VARIANTS]
    if axis == "target_network":
        return [variant(str(flag).lower(), use_target_network=flag)
                for flag in (True, False)]
    if axis == "segment_mode":
        runs = [variant("random", segment_mode="random")]
        for frac in SEGMENT_MODE_FRACTIONS:
            L = max(1, round(frac * cfg.episode_steps))
            runs.append(variant(f"fixed{int(frac * 100)}",
                                segment_mode="fixed", segment_len=L))
        return runs
    if axis == "layer_norm":
        return [variant(str(flag).lower(), critic_layer_norm=flag)
                for flag in (True, False)]
    if axis == "dropout":
        return [variant(f"{rate:g}", critic_dropout=rate) for rate in (0.0, 0.1)]
    if axis == "trust_region":
        return [variant(str(flag).lower(), use_trust_region=flag)
                for flag in (True, False)]
    if axis == "init_cond":
        return [variant(str(flag).lower(), use_init_cond=flag)
                for flag in (True, False)]
    raise ValueError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")


def ablate(cfg: RunConfig, axis: str) -> list[dict]:
    """Train every config on the axis; one metrics CSV per run."""
    results = []
    for label, run_cfg in ablation_configs(cfg, axis):
        status = train(run_cfg)
        results.append({"label": label, "out_dir": run_cfg.out_dir,
                        "status": status,
                        "metrics": os.path.join(run_cfg.out_dir, "metrics.csv")})
    return results
