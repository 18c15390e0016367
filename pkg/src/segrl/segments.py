"""Segmentation, n-step returns, critic loss, and the policy objective.

Episodes are tiled into contiguous segments starting at t=0 with stride L;
the final segment keeps whatever remains. The critic trains every sub-prefix
of a segment against its n-step return (rewards plus a bootstrapped future
value), and trains V(s) against the target critic's value of a FRESH action
segment: a new parameter vector is sampled from the current policy and its
trajectory is re-anchored so it passes through the old reference at the
segment start. That re-anchoring is what makes an off-policy (state, new
action) pair consistent.

The policy objective scores, under the live critic, segments sliced from a
full trajectory regenerated differentiably from a reparameterized sample,
anchored at the task initial state.

All targets enter as plain ndarrays, so they are structurally detached; no
stop-gradient machinery is needed or used.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .policy import (
    PolicyOutput,
    project_trust_region,
    sample_reparameterized,
    trust_region_penalty,
)
from .prodmp import (
    BasisSet,
    generate_batch_full,
    generate_batch_windows,
    generate_batch_windows_ic,
    scale_params,
    solve_ic_batch,
)
from .replay import TrajectoryRecord

TARGET_VARIANTS = ("v_target", "q_target", "v_clipped", "v_ensemble")
SEGMENT_LENGTH_MIN = 4


@dataclass(frozen=True)
class TargetOptions:
    variant: str = "v_target"
    n_target_critics: int = 1
    use_target_network: bool = True
    reanchor: bool = True     # anchor fresh actions at the segment start, not t=0

    def __post_init__(self):
        if self.variant not in TARGET_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {TARGET_VARIANTS}")
        if self.variant in ("v_clipped", "v_ensemble") and self.n_target_critics != 2:
            raise ValueError(f"{self.variant} requires n_target_critics=2")
        if self.n_target_critics not in (1, 2):
            raise ValueError("n_target_critics must be 1 or 2")


@dataclass
class SegmentGroup:
    """All segments of one length, flattened over (trajectory, start)."""
    L: int
    traj_idx: np.ndarray      # (M,) row into the batch's per-trajectory arrays
    t0: np.ndarray            # (M,) absolute start step
    start_state: np.ndarray   # (M, S + 2D) task state with appended reference
    ref_pos: np.ndarray       # (M, D) old reference at t0
    ref_vel: np.ndarray       # (M, D)
    actions: np.ndarray       # (M, L, D) buffered actions of the segment
    rewards: np.ndarray       # (M, L)
    boot_states: np.ndarray   # (M, L, S + 2D) states after 1..L steps, refs appended
    boot_abs: np.ndarray      # (M, L) absolute step index of each bootstrap state


@dataclass
class SegmentBatch:
    L: int                    # nominal segment length drawn for this update
    T: int
    gamma: float
    init_states: np.ndarray   # (B, S) task initial states
    init_pos: np.ndarray      # (B, D)
    init_vel: np.ndarray      # (B, D)
    full_actions: np.ndarray  # (B, T, D)
    groups: list[SegmentGroup] = field(default_factory=list)

    @property
    def n_segments(self) -> int:
        return sum(g.traj_idx.size for g in self.groups)


def draw_segment_length(rng: np.random.Generator, T: int,
                        lo: int = SEGMENT_LENGTH_MIN) -> int:
    """Uniform integer in [lo, T//2], drawn fresh every update iteration."""
    hi = max(lo, T // 2)
    return int(rng.integers(lo, hi + 1))


def extend_state(state: np.ndarray, ref_pos: np.ndarray, ref_vel: np.ndarray) -> np.ndarray:
    """Critic state token: task state with the old reference appended."""
    return np.concatenate([state, ref_pos, ref_vel], axis=-1)


def split_segments(trajs: list[TrajectoryRecord], L: int, gamma: float) -> SegmentBatch:
    """Tile each trajectory into segments [0:L), [L:2L), ...; keep the short tail."""
    T = trajs[0].T
    if not 1 <= L <= T:
        raise ValueError(f"segment length {L} outside [1, {T}]")
    if any(tr.T != T for tr in trajs):
        raise ValueError("mixed trajectory lengths in one batch")
    B = len(trajs)
    D = trajs[0].actions.shape[1]

    states = np.stack([tr.states for tr in trajs])            # (B, T+1, S)
    actions = np.stack([tr.actions for tr in trajs])          # (B, T, D)
    action_vels = np.stack([tr.action_vels for tr in trajs])
    rewards = np.stack([tr.rewards for tr in trajs])
    init_pos = np.stack([tr.init_pos for tr in trajs])
    init_vel = np.stack([tr.init_vel for tr in trajs])

    # reference tracked when state t was visited: grid point t of the old plan
    ref_pos = np.concatenate([init_pos[:, None, :], actions], axis=1)      # (B, T+1, D)
    ref_vel = np.concatenate([init_vel[:, None, :], action_vels], axis=1)
    states_ext = np.concatenate([states, ref_pos, ref_vel], axis=-1)       # (B, T+1, S+2D)

    starts = np.arange(0, T, L)
    lengths = np.minimum(L, T - starts)
    batch = SegmentBatch(L=L, T=T, gamma=gamma,
                         init_states=states[:, 0, :].copy(),
                         init_pos=init_pos, init_vel=init_vel,
                         full_actions=actions)
    for seg_len in np.unique(lengths):
        sel = starts[lengths == seg_len]
        t0 = np.repeat(sel, B)                                # (M,) start per segment
        traj_idx = np.tile(np.arange(B), sel.size)
        offs = np.arange(1, seg_len + 1)
        boot_abs = t0[:, None] + offs                         # (M, seg_len)
        win = t0[:, None] + np.arange(seg_len)
        batch.groups.append(SegmentGroup(
            L=int(seg_len),
            traj_idx=traj_idx,
            t0=t0,
            start_state=states_ext[traj_idx, t0],
            ref_pos=ref_pos[traj_idx, t0],
            ref_vel=ref_vel[traj_idx, t0],
            actions=actions[traj_idx[:, None], win],
            rewards=rewards[traj_idx[:, None], win],
            boot_states=states_ext[traj_idx[:, None], boot_abs],
            boot_abs=boot_abs,
        ))
    return batch


def n_step_return(rewards, gamma: float, N: int, future_value: float) -> float:
    """G = sum_{i<N} gamma^i r_i + gamma^N * future_value."""
    rewards = np.asarray(rewards, dtype=np.float64)
    if not 1 <= N <= rewards.shape[-1]:
        raise ValueError(f"N={N} outside [1, {rewards.shape[-1]}]")
    disc = gamma ** np.arange(N)
    return float(disc @ rewards[:N] + gamma ** N * future_value)


def _reduce_critic_values(values: list[np.ndarray], variant: str) -> np.ndarray:
    stacked = np.stack(values)
    if variant == "v_clipped":
        return stacked.min(axis=0)
    if variant == "v_ensemble":
        return stacked.mean(axis=0)
    return stacked[0]


def _value_of_states(critic, states: np.ndarray, action_dim: int) -> np.ndarray:
    """V for a flat batch of states via a zero dummy action token; the causal
    mask makes the value output independent of it."""
    dummy = np.zeros((states.shape[0], 1, action_dim))
    return critic.forward(states, dummy).v.data


def _future_values(group: SegmentGroup, batch: SegmentBatch, value_critics,
                   opts: TargetOptions) -> np.ndarray:
    """(M, L) bootstrap values for s_1..s_L per the configured variant."""
    M, L = group.rewards.shape
    flat_states = group.boot_states.reshape(M * L, -1)
    action_dim = batch.full_actions.shape[-1]

    if opts.variant in ("v_target", "v_clipped", "v_ensemble"):
        vals = [_value_of_states(c, flat_states, action_dim) for c in value_critics]
        return _reduce_critic_values(vals, opts.variant).reshape(M, L)

    # q_target: value the remaining buffered actions from each bootstrap state;
    # at the episode end nothing remains and the episodic value is zero
    flat_abs = group.boot_abs.reshape(-1)
    flat_traj = np.repeat(group.traj_idx, L)
    out = np.empty(M * L)
    remaining = batch.T - flat_abs
    for n_left in np.unique(remaining):
        sel = np.where(remaining == n_left)[0]
        if n_left == 0:
            out[sel] = 0.0
            continue
        suffix_idx = flat_abs[sel, None] + np.arange(n_left)
        suffix = batch.full_actions[flat_traj[sel, None], suffix_idx]
        out[sel] = value_critics[0].forward(flat_states[sel], suffix).q.data[:, -1]
    return out.reshape(M, L)


def fresh_action_segments(batch: SegmentBatch, group: SegmentGroup,
                          W: np.ndarray, bases: BasisSet,
                          reanchor: bool = True) -> np.ndarray:
    """Re-anchor new parameters to the old reference at each segment start.

    W is (B, n_basis+1, D) scaled parameters, one per trajectory; the result
    is the (M, L, D) action block whose generating trajectory passes through
    (ref_pos, ref_vel) at grid point t0. With reanchor off (ablation), the
    trajectory is pinned at the episode start instead and merely sliced.
    """
    Wg = W[group.traj_idx]
    if reanchor:
        t_b, y_b, dy_b = group.t0, group.ref_pos, group.ref_vel
    else:
        t_b = np.zeros_like(group.t0)
        y_b = batch.init_pos[group.traj_idx]
        dy_b = batch.init_vel[group.traj_idx]
    c1, c2 = solve_ic_batch(bases, Wg, t_b, y_b, dy_b)
    idx = group.t0[:, None] + 1 + np.arange(group.L)
    return generate_batch_windows(bases, Wg, c1, c2, idx)


def _sample_policy_params(policy, old_policy, bounds, states: np.ndarray,
                          rng: np.random.Generator) -> np.ndarray:
    """Draw w~ from the trust-region-projected current policy, as constants.

    bounds None (ablation) samples the unprojected policy."""
    with T.inference_mode():
        new = policy.forward(states)
        proj = PolicyOutput(new.mu.data, new.chol.data)
        if bounds is not None:
            old = old_policy.forward(states)
            proj = project_trust_region(
                proj, PolicyOutput(old.mu.data, old.chol.data), bounds)
        eps = rng.standard_normal(proj.mu.shape)
        return sample_reparameterized(proj, eps)


def critic_loss(batch: SegmentBatch, critics: list, target_critics: list,
                policy, old_policy, bounds, opts: TargetOptions,
                bases: BasisSet, mp_cfg, rng: np.random.Generator):
    """Squared-error critic objective over every segment in the batch.

    Per segment: (1/L) * sum_{N=1}^{L-1} [Q(s0, a_0..a_{N-1}) - G^(N)]^2
    plus [V(s0) - Q_tar(s0, fresh re-anchored actions)]^2, averaged over all
    segments and (when two critics train) over critics. Segments that end at
    the episode boundary extend the N-sum to N = L with V(s_T) = 0.
    Returns (loss DiffTensor, info dict).
    """
    value_critics = target_critics if opts.use_target_network else critics
    w_new = _sample_policy_params(policy, old_policy, bounds, batch.init_states, rng)
    W = scale_params(mp_cfg, w_new)

    gamma = batch.gamma
    total = None
    n_segments = 0
    td_sum = 0.0
    for group in batch.groups:
        M, L = group.rewards.shape
        n_segments += M

        fresh = fresh_action_segments(batch, group, W, bases, opts.reanchor)
        with T.inference_mode():
            q_fresh = _reduce_critic_values(
                [c.forward(group.start_state, fresh).q.data[:, -1]
                 for c in value_critics], opts.variant)
            future = _future_values(group, batch, value_critics, opts)

        # Episodic boundary: the remaining-episode value at s_T is zero, so a
        # tile that ends the episode also trains its full-prefix token, on the
        # pure reward sum (N = L with no bootstrap). Without this term the
        # final reward reaches no target at all and nothing anchors the value
        # recursion at gamma = 1.
        terminal = group.t0 + L == batch.T                     # (M,)
        future[terminal, L - 1] = 0.0

        disc = gamma ** np.arange(L)
        partial = np.cumsum(group.rewards * disc, axis=1)      # (M, L)
        G = partial + future * (gamma * disc)                  # G^(N) at column N-1

        term_mask = terminal.astype(np.float64)
        group_loss = None
        for critic in critics:
            # dropout (when configured) applies to the trained forward only
            out = critic.forward(group.start_state, group.actions, dropout_rng=rng)
            v_err = T.sub(out.v, q_fresh)
            per_seg = T.mul(v_err, v_err)
            if L > 1:
                q_err = T.sub(out.q[:, : L - 1], G[:, : L - 1])
                per_seg = T.add(T.mul(T.sum_(T.mul(q_err, q_err), axis=1), 1.0 / L),
                                per_seg)
            if terminal.any():
                t_err = T.sub(out.q[:, L - 1], G[:, L - 1])
                per_seg = T.add(T.mul(T.mul(t_err, t_err), term_mask / L), per_seg)
            if not np.all(np.isfinite(per_seg.data)):
                bad = int(np.flatnonzero(~np.isfinite(per_seg.data))[0])
                raise FloatingPointError(
                    f"non-finite critic loss at segment t0={group.t0[bad]} "
                    f"of batch row {group.traj_idx[bad]}")
            contrib = T.sum_(per_seg)
            group_loss = contrib if group_loss is None else T.add(group_loss, contrib)
            with T.inference_mode():
                if L > 1:
                    td_sum += float(np.abs(out.q.data[:, : L - 1] - G[:, : L - 1]).sum())
        total = group_loss if total is None else T.add(total, group_loss)

    loss = T.mul(total, 1.0 / (n_segments * len(critics)))
    info = {"critic_loss": float(loss.data), "n_segments": n_segments,
            "td_abs_mean": td_sum / max(1, n_segments * len(critics))}
    return loss, info


def policy_objective(batch: SegmentBatch, critics: list, policy, old_policy,
                     bounds, bases: BasisSet, rng: np.random.Generator,
                     segment_ic: bool = False):
    """-J(theta) + trust-region penalty, to be minimized.

    J averages Q(s0^k, new actions 0..N) over every segment k and prefix
    length N; the new actions come from one reparameterized draw per
    trajectory. By default they are the matching window of the plan generated
    from the task initial state; with segment_ic the window is re-anchored to
    the old reference at each segment start, so every (state, action) pair the
    critic scores is dynamically consistent. Wrap the backward in
    tensor.frozen(critic params) so the critic stays a fixed scorer.
    """
    new_out = policy.forward(batch.init_states)
    if bounds is not None:
        with T.inference_mode():
            old_raw = old_policy.forward(batch.init_states)
            old = PolicyOutput(old_raw.mu.data, old_raw.chol.data)
        proj = project_trust_region(new_out, old, bounds)
    else:
        proj = new_out
    eps = rng.standard_normal(proj.mu.shape)
    w_new = sample_reparameterized(proj, eps)                  # (B, P) DiffTensor
    B = batch.init_states.shape[0]
    D = batch.init_pos.shape[1]
    if not segment_ic:
        pos, _ = generate_batch_full(bases, w_new, batch.init_pos, batch.init_vel)
        actions = T.slice_(pos, (slice(None), slice(1, None)))  # grid 1..T
        flat = T.reshape(actions, (B * batch.T, D))

    q_total = None
    for group in batch.groups:
        M, L = group.rewards.shape
        if segment_ic:
            w_g = T.gather(w_new, group.traj_idx)
            idx = group.t0[:, None] + 1 + np.arange(L)
            seg_actions = generate_batch_windows_ic(
                bases, w_g, group.t0, group.ref_pos, group.ref_vel, idx)
        else:
            win = group.t0[:, None] + np.arange(L)
            rows = (group.traj_idx[:, None] * batch.T + win).reshape(-1)
            seg_actions = T.reshape(T.gather(flat, rows), (M, L, D))
        q_vals = [c.forward(group.start_state, seg_actions).q for c in critics]
        q = q_vals[0]
        if len(q_vals) > 1:
            q = T.mul(T.add(q_vals[0], q_vals[1]), 0.5)
        contrib = T.sum_(q)
        q_total = contrib if q_total is None else T.add(q_total, contrib)

    # segments tile the episode, so prefix count per trajectory sums to T
    J = T.mul(q_total, 1.0 / (B * batch.T))
    if bounds is not None:
        penalty = trust_region_penalty(new_out, old, proj)
        loss = T.add(T.neg(J), penalty)
        pen_value = float(penalty.data)
    else:
        loss = T.neg(J)
        pen_value = 0.0
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite policy objective")
    info = {"policy_obj": float(J.data), "trust_penalty": pen_value}
    return loss, info


def critic_bias_diagnostic(trajs: list[TrajectoryRecord], critic, gamma: float,
                           L: int) -> float:
    """Mean (Q_predicted - Monte-Carlo return) over all segments.

    Q_predicted values the whole segment's actions; the MC return discounts
    the actual rewards from the segment start to the episode end. Positive
    bias means the critic overestimates.
    """
    batch = split_segments(trajs, L, gamma)
    diffs = []
    for group in batch.groups:
        with T.inference_mode():
            q_pred = critic.forward(group.start_state, group.actions).q.data[:, -1]
        rewards = np.stack([trajs[i].rewards for i in group.traj_idx])
        M = group.t0.size
        mc = np.empty(M)
        for row in range(M):
            tail = rewards[row, group.t0[row]:]
            mc[row] = (gamma ** np.arange(tail.size)) @ tail
        diffs.append(q_pred - mc)
    return float(np.concatenate(diffs).mean())
