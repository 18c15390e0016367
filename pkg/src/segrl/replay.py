"""Trajectory-granularity replay buffer.

Whole episodes are stored, not transitions: segment losses need contiguous
reward runs, the behavior Gaussian, and the desired (reference) trajectory
the controller tracked, so that new action sequences can be re-anchored to
the old reference at any segment boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TrajectoryRecord:
    states: np.ndarray        # (T+1, S) task states incl. reset state
    actions: np.ndarray       # (T, D) desired positions the controller tracked
    action_vels: np.ndarray   # (T, D) matching desired velocities
    rewards: np.ndarray       # (T,)
    init_pos: np.ndarray      # (D,) reference position at step 0
    init_vel: np.ndarray      # (D,) reference velocity at step 0
    mu_old: np.ndarray        # (P,) behavior-policy mean
    chol_old: np.ndarray      # (P, P) behavior-policy Cholesky factor
    seed: int

    def __post_init__(self):
        T, D = self.actions.shape
        if self.states.shape[0] != T + 1:
            raise ValueError(f"states rows {self.states.shape[0]} != T+1 = {T + 1}")
        if self.action_vels.shape != (T, D):
            raise ValueError("action_vels shape mismatch")
        if self.rewards.shape != (T,):
            raise ValueError("rewards shape mismatch")
        if self.init_pos.shape != (D,) or self.init_vel.shape != (D,):
            raise ValueError("initial reference shape mismatch")
        P = self.mu_old.shape[0]
        if self.chol_old.shape != (P, P):
            raise ValueError("behavior Gaussian shape mismatch")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("non-finite rewards")

    @property
    def T(self) -> int:
        return self.actions.shape[0]

    def reference_at(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Desired (pos, vel) the controller was tracking when state t was visited."""
        if t == 0:
            return self.init_pos, self.init_vel
        return self.actions[t - 1], self.action_vels[t - 1]


@dataclass
class ReplayBuffer:
    capacity: int = 3000
    _items: list = field(default_factory=list)
    _next: int = 0
    total_pushed: int = 0

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")

    def __len__(self) -> int:
        return len(self._items)

    def push(self, traj: TrajectoryRecord) -> None:
        if len(self._items) < self.capacity:
            self._items.append(traj)
        else:
            self._items[self._next] = traj   # FIFO: overwrite the oldest slot
        self._next = (self._next + 1) % self.capacity
        self.total_pushed += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[TrajectoryRecord]:
        """Uniform with replacement."""
        if not self._items:
            raise IndexError("sample from empty replay buffer")
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]

    def __iter__(self):
        return iter(self._items)
