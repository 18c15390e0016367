"""Desk-scale point-mass environments with whole-trajectory execution.

Each episode executes a full desired-position trajectory (plus desired
velocities) through a PD controller on double-integrator dynamics, recording
every intermediate state and reward. Dynamics are deterministic; the only
randomness is the goal draw at reset, so a (seed, actions) pair pins down the
whole episode.

point_reacher_dense / point_reacher_sparse: 2-DoF mass starting at the origin
must end on a goal drawn uniformly from [-1, 1]^2. The dense variant pays a
squared distance penalty every step, the sparse one only at the final step.
via_point_1d: 1-DoF mass must pass through a waypoint mid-episode and stop at
a goal, both drawn from [-1, 1]; distance is only scored at those two steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ENV_NAMES = ("point_reacher_dense", "point_reacher_sparse", "via_point_1d")

KP = 100.0
KD = 20.0
TORQUE_LIMIT = 20.0
CONTROL_COST = 1e-3
TERMINAL_SCALE = 10.0
SUCCESS_DISTANCE = 0.05


@dataclass(frozen=True)
class EnvSpec:
    name: str
    T: int = 40
    dt: float = 0.05
    goal_low: float = -1.0
    goal_high: float = 1.0

    def __post_init__(self):
        if self.name not in ENV_NAMES:
            raise ValueError(f"unknown env {self.name!r}; choose from {ENV_NAMES}")
        if self.T < 2:
            raise ValueError("episode length T must be at least 2")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.goal_low >= self.goal_high:
            raise ValueError("empty goal range")

    @property
    def n_dof(self) -> int:
        return 1 if self.name == "via_point_1d" else 2

    @property
    def state_dim(self) -> int:
        # pos, vel, then goal (plus the waypoint for the via-point task)
        return 2 * self.n_dof + (2 if self.name == "via_point_1d" else self.n_dof)


@dataclass
class StepResult:
    state: np.ndarray
    reward: float
    done: bool


def pd_track(desired_pos, desired_vel, pos, vel,
             kp: float = KP, kd: float = KD,
             limit: float = TORQUE_LIMIT) -> np.ndarray:
    u = kp * (np.asarray(desired_pos) - pos) + kd * (np.asarray(desired_vel) - vel)
    return np.clip(u, -limit, limit)


class Env:
    """Value machine over EnvSpec; reset draws the goal, rollout executes."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self._pos = None
        self._vel = None
        self._targets = None    # goal, preceded by the waypoint for via_point_1d
        self._t = 0

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        d = self.spec.n_dof
        self._pos = np.zeros(d)
        self._vel = np.zeros(d)
        n_targets = 2 if self.spec.name == "via_point_1d" else 1
        self._targets = rng.uniform(self.spec.goal_low, self.spec.goal_high,
                                    size=n_targets * d)
        self._t = 0
        return self._state()

    def _state(self) -> np.ndarray:
        return np.concatenate([self._pos, self._vel, self._targets])

    @property
    def goal(self) -> np.ndarray:
        return self._targets[-self.spec.n_dof:]

    @property
    def via_point(self) -> np.ndarray:
        if self.spec.name != "via_point_1d":
            raise AttributeError("only via_point_1d has a waypoint")
        return self._targets[: self.spec.n_dof]

    def step(self, desired_pos, desired_vel) -> StepResult:
        if self._pos is None:
            raise RuntimeError("step before reset")
        spec = self.spec
        u = pd_track(desired_pos, desired_vel, self._pos, self._vel)
        # semi-implicit Euler on a unit mass: torque moves velocity first
        self._vel = self._vel + spec.dt * u
        self._pos = self._pos + spec.dt * self._vel
        self._t += 1

        cost = CONTROL_COST * float(u @ u)
        dist_sq = float((self._pos - self.goal) @ (self._pos - self.goal))
        if spec.name == "point_reacher_dense":
            reward = -dist_sq - cost
        elif spec.name == "point_reacher_sparse":
            reward = -cost
            if self._t == spec.T:
                reward -= TERMINAL_SCALE * dist_sq
        else:  # via_point_1d
            reward = -cost
            if self._t == spec.T // 2:
                via_err = self._pos - self.via_point
                reward -= TERMINAL_SCALE * float(via_err @ via_err)
            if self._t == spec.T:
                reward -= TERMINAL_SCALE * dist_sq
        return StepResult(self._state(), reward, self._t == spec.T)

    def rollout(self, desired_pos: np.ndarray, desired_vel: np.ndarray):
        """Execute a full T-step desired trajectory; returns (states, rewards).

        states has T+1 rows including the reset state; rewards has T entries.
        """
        spec = self.spec
        desired_pos = np.asarray(desired_pos, dtype=np.float64)
        desired_vel = np.asarray(desired_vel, dtype=np.float64)
        if desired_pos.shape != (spec.T, spec.n_dof) or desired_vel.shape != desired_pos.shape:
            raise ValueError(
                f"expected desired trajectories of shape {(spec.T, spec.n_dof)}, "
                f"got {desired_pos.shape} and {desired_vel.shape}")
        states = np.empty((spec.T + 1, spec.state_dim))
        rewards = np.empty(spec.T)
        states[0] = self._state()
        for t in range(spec.T):
            res = self.step(desired_pos[t], desired_vel[t])
            states[t + 1] = res.state
            rewards[t] = res.reward
        return states, rewards

    def success(self, final_state: np.ndarray) -> bool:
        """Goal reached: final distance at most the success threshold."""
        d = self.spec.n_dof
        pos = final_state[:d]
        return bool(np.linalg.norm(pos - self.goal) <= SUCCESS_DISTANCE)


def make_env(name: str, T: int = 40, dt: float = 0.05) -> Env:
    return Env(EnvSpec(name=name, T=T, dt=dt))
