"""Decoder-only transformer valuing action sub-sequences.

Input is one state token followed by L action tokens; output is L+1 scalars
read through a shared linear head: position 0 is V(s), position N >= 1 is
Q(s, a_1..a_N). A causal mask keeps each output blind to later actions, which
is what lets one forward pass produce every n-step Q-value of a segment at
once. The state token and the first action token share positional encoding
slot 0 so that value and first Q see the sequence start identically.

Blocks are pre-layer-norm with a learnable affine, feed-forward expansion x4
with leaky-relu, and a final layer norm. All of it can be switched off with
use_layer_norm=False for ablations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .policy import orthogonal

POS_INIT_SCALE = 0.02
HEAD_SCALE = 0.01


@dataclass(frozen=True)
class CriticConfig:
    n_layers: int = 2
    n_heads: int = 8
    dims_per_head: int = 16
    max_seq_len: int = 1024
    use_layer_norm: bool = True
    dropout_rate: float = 0.0

    def __post_init__(self):
        if min(self.n_layers, self.n_heads, self.dims_per_head, self.max_seq_len) < 1:
            raise ValueError("critic dimensions must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def model_dim(self) -> int:
        return self.n_heads * self.dims_per_head


@dataclass
class CriticOutput:
    v: object   # (B,)   state values
    q: object   # (B, L) q[:, N] = Q(s, a_1..a_{N+1})


class TransformerCritic:
    def __init__(self, state_dim: int, action_dim: int, cfg: CriticConfig,
                 rng: np.random.Generator, name: str = "critic"):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.cfg = cfg
        self.name = name
        D = cfg.model_dim
        self._params: list[T.DiffTensor] = []

        def p(arr, suffix):
            t = T.parameter(arr, f"{name}/{suffix}")
            self._params.append(t)
            return t

        self.w_state = p(orthogonal(rng, state_dim, D, 1.0), "w_state")
        self.b_state = p(np.zeros(D), "b_state")
        self.w_action = p(orthogonal(rng, action_dim, D, 1.0), "w_action")
        self.b_action = p(np.zeros(D), "b_action")
        self.pos = p(rng.standard_normal((cfg.max_seq_len, D)) * POS_INIT_SCALE, "pos")

        self.layers = []
        for i in range(cfg.n_layers):
            lay = {
                "w_q": p(orthogonal(rng, D, D, 1.0), f"l{i}/w_q"),
                "w_k": p(orthogonal(rng, D, D, 1.0), f"l{i}/w_k"),
                "w_v": p(orthogonal(rng, D, D, 1.0), f"l{i}/w_v"),
                "w_o": p(orthogonal(rng, D, D, 1.0), f"l{i}/w_o"),
                "b_o": p(np.zeros(D), f"l{i}/b_o"),
                "w_f1": p(orthogonal(rng, D, 4 * D, np.sqrt(2.0)), f"l{i}/w_f1"),
                "b_f1": p(np.zeros(4 * D), f"l{i}/b_f1"),
                "w_f2": p(orthogonal(rng, 4 * D, D, 1.0), f"l{i}/w_f2"),
                "b_f2": p(np.zeros(D), f"l{i}/b_f2"),
            }
            if cfg.use_layer_norm:
                lay["ln1_g"] = p(np.ones(D), f"l{i}/ln1_g")
                lay["ln1_b"] = p(np.zeros(D), f"l{i}/ln1_b")
                lay["ln2_g"] = p(np.ones(D), f"l{i}/ln2_g")
                lay["ln2_b"] = p(np.zeros(D), f"l{i}/ln2_b")
            self.layers.append(lay)
        if cfg.use_layer_norm:
            self.lnf_g = p(np.ones(D), "lnf_g")
            self.lnf_b = p(np.zeros(D), "lnf_b")
        self.w_head = p(orthogonal(rng, D, 1, HEAD_SCALE), "w_head")
        self.b_head = p(np.zeros(1), "b_head")

    def parameters(self) -> list[T.DiffTensor]:
        return list(self._params)

    def _ln(self, x, g, b):
        return T.add(T.mul(T.layer_norm(x), g), b)

    def _attention(self, x, lay, n_tokens: int):
        cfg = self.cfg
        B = x.shape[0]
        H, dh, D = cfg.n_heads, cfg.dims_per_head, cfg.model_dim

        def heads(w):
            proj = T.matmul(x, w)                                    # (B, T, D)
            return T.transpose(T.reshape(proj, (B, n_tokens, H, dh)), (0, 2, 1, 3))

        q, k, v = heads(lay["w_q"]), heads(lay["w_k"]), heads(lay["w_v"])
        scores = T.div(T.matmul(q, T.swap_last(k)), np.sqrt(dh))     # (B, H, T, T)
        mask = np.triu(np.full((n_tokens, n_tokens), -np.inf), k=1)
        weights = T.softmax(T.add(scores, mask))
        mixed = T.matmul(weights, v)                                 # (B, H, T, dh)
        mixed = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (B, n_tokens, D))
        return T.add(T.matmul(mixed, lay["w_o"]), lay["b_o"])

    def forward(self, states: np.ndarray, actions,
                dropout_rng: np.random.Generator | None = None) -> CriticOutput:
        """states (B, S) constants; actions (B, L, A) ndarray or DiffTensor."""
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = states[None, :]
        if not isinstance(actions, T.DiffTensor):
            actions = T.DiffTensor(np.asarray(actions, dtype=np.float64))
        if actions.data.ndim == 2:
            actions = T.reshape(actions, (1, *actions.data.shape))
        B, L = actions.data.shape[0], actions.data.shape[1]
        if L < 1:
            raise ValueError("critic needs at least one action token")
        if L + 1 > self.cfg.max_seq_len:
            raise ValueError(
                f"sequence of {L + 1} tokens exceeds max_seq_len={self.cfg.max_seq_len}")

        cfg = self.cfg
        se = T.reshape(T.add(T.matmul(T.DiffTensor(states), self.w_state), self.b_state),
                       (B, 1, cfg.model_dim))
        ae = T.add(T.matmul(actions, self.w_action), self.b_action)
        x = T.concat([se, ae], axis=1)                               # (B, L+1, D)
        # state and first action share slot 0; action i then reads slot i-1
        pos_idx = np.concatenate(([0], np.arange(L)))
        x = T.add(x, T.gather(self.pos, pos_idx))

        def drop(t):
            if cfg.dropout_rate > 0.0 and dropout_rng is not None:
                return T.dropout(t, cfg.dropout_rate, dropout_rng)
            return t

        n_tokens = L + 1
        for lay in self.layers:
            h = self._ln(x, lay["ln1_g"], lay["ln1_b"]) if cfg.use_layer_norm else x
            x = T.add(x, drop(self._attention(h, lay, n_tokens)))
            h = self._ln(x, lay["ln2_g"], lay["ln2_b"]) if cfg.use_layer_norm else x
            ff = T.matmul(T.leaky_relu(T.add(T.matmul(h, lay["w_f1"]), lay["b_f1"])),
                          lay["w_f2"])
            x = T.add(x, drop(T.add(ff, lay["b_f2"])))
        if cfg.use_layer_norm:
            x = self._ln(x, self.lnf_g, self.lnf_b)

        out = T.reshape(T.add(T.matmul(x, self.w_head), self.b_head), (B, n_tokens))
        if not np.all(np.isfinite(out.data)):
            raise FloatingPointError(f"{self.name}: non-finite value output")
        return CriticOutput(v=out[:, 0], q=out[:, 1:])

    def clone(self, name: str | None = None) -> "TransformerCritic":
        other = TransformerCritic(self.state_dim, self.action_dim, self.cfg,
                                  np.random.default_rng(0),
                                  name or self.name + "_tar")
        for src, dst in zip(self._params, other._params):
            dst.data[...] = src.data
        return other


def polyak_update(live: list[T.DiffTensor], target: list[T.DiffTensor],
                  rho: float) -> None:
    """target <- (1 - rho) * target + rho * live, in place."""
    for src, dst in zip(live, target):
        dst.data *= (1.0 - rho)
        dst.data += rho * src.data
