"""Adam with bias correction over named DiffTensor parameters."""

from __future__ import annotations

import numpy as np

from .tensor import DiffTensor


class NonFiniteGradientError(RuntimeError):
    def __init__(self, name: str):
        self.param_name = name
        super().__init__(f"non-finite gradient for parameter {name!r}")


class Adam:
    """Per-parameter first/second moment state, persistent across steps.

    step() consumes .grad of every registered parameter (missing grads are
    treated as zero), applies the bias-corrected update in place, and clears
    the grads. Moments are part of the run state and survive checkpointing.
    """

    def __init__(self, params: list[DiffTensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(p.name or f"param[{i}]")
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            mhat = self.m[i] / b1t
            vhat = self.v[i] / b2t
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            p.grad = None

    # -- state for checkpointing ----------------------------------------
    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for i, p in enumerate(self.params):
            key = p.name or f"param{i}"
            out[f"{prefix}/m/{key}"] = self.m[i]
            out[f"{prefix}/v/{key}"] = self.v[i]
        return out

    def load_state_arrays(self, prefix: str, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for i, p in enumerate(self.params):
            key = p.name or f"param{i}"
            self.m[i] = arrays[f"{prefix}/m/{key}"].reshape(self.m[i].shape).copy()
            self.v[i] = arrays[f"{prefix}/v/{key}"].reshape(self.v[i].shape).copy()
