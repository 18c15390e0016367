"""Run configuration.

One flat dataclass of primitives, loadable from a `key = value` text file
('#' starts a comment, blank lines ignored). CLI flags override file values;
the TOP_ERL_OUT environment variable overrides the output directory last.
Derived objects (env spec, primitive and critic configs, target options,
trust-region bounds) are built on demand so a config stays a plain value.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

from .critic import CriticConfig
from .policy import TrustRegionBounds
from .prodmp import MPConfig
from .segments import TARGET_VARIANTS, TargetOptions

SEGMENT_MODES = ("random", "fixed")
POLICY_IC_MODES = ("task_init", "segment")

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


@dataclass(frozen=True)
class RunConfig:
    # task
    env: str = "point_reacher_dense"
    episode_steps: int = 40
    dt: float = 0.05
    gamma: float = 0.99
    # movement primitive
    n_basis: int = 8
    weight_scale: float = 0.3     # primitive parameter scaling per dof
    goal_scale: float = 0.3
    # policy network
    hidden: int = 128
    init_sigma: float = 1.0       # exploration std a fresh policy emits
    min_sigma: float = 0.0        # hard std floor (log-std clamp); 0 = off
    # critic network
    critic_layers: int = 2
    critic_heads: int = 8
    critic_dims_per_head: int = 16
    critic_layer_norm: bool = True
    critic_dropout: float = 0.0
    # targets and regularization
    target_variant: str = "v_target"
    use_target_network: bool = True
    use_trust_region: bool = True
    use_init_cond: bool = True
    eps_mu: float = 0.005
    eps_sigma: float = 0.0005
    # optimization
    lr_policy: float = 3e-4
    lr_critic: float = 5e-5
    epochs_policy: int = 15
    epochs_critic: int = 30
    batch_size: int = 512
    rho: float = 0.005
    ema_rate: float = 0.005
    # loop
    rollouts_per_iter: int = 1
    learning_starts: int = 50
    segment_mode: str = "random"
    segment_len: int = 0          # fixed mode; 0 means the whole episode
    policy_ic: str = "task_init"  # action generation anchor for policy updates
    buffer_capacity: int = 3000
    total_env_steps: int = 200_000
    eval_episodes: int = 10
    checkpoint_every: int = 0     # iterations between checkpoints; 0 = final only
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        for key in ("lr_policy", "lr_critic", "rho", "ema_rate", "dt", "init_sigma",
                    "weight_scale", "goal_scale"):
            if getattr(self, key) <= 0:
                raise ValueError(f"{key} must be positive")
        if not 0.0 <= self.min_sigma < self.init_sigma:
            raise ValueError("min_sigma must satisfy 0 <= min_sigma < init_sigma")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.segment_mode not in SEGMENT_MODES:
            raise ValueError(f"segment_mode must be one of {SEGMENT_MODES}")
        if self.policy_ic not in POLICY_IC_MODES:
            raise ValueError(f"policy_ic must be one of {POLICY_IC_MODES}")
        if self.target_variant not in TARGET_VARIANTS:
            raise ValueError(f"target_variant must be one of {TARGET_VARIANTS}")
        if self.segment_len < 0 or self.segment_len > self.episode_steps:
            raise ValueError("segment_len outside [0, episode_steps]")
        for key in ("episode_steps", "batch_size", "epochs_policy", "epochs_critic",
                    "rollouts_per_iter", "eval_episodes", "total_env_steps"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be at least 1")

    # -- derived pieces -------------------------------------------------

    @property
    def n_critics(self) -> int:
        return 2 if self.target_variant in ("v_clipped", "v_ensemble") else 1

    def mp_config(self, n_dof: int) -> MPConfig:
        return MPConfig(n_dof=n_dof, tau=self.episode_steps * self.dt,
                        dt=self.dt, T=self.episode_steps, n_basis=self.n_basis,
                        weight_scale=self.weight_scale, goal_scale=self.goal_scale)

    def critic_config(self) -> CriticConfig:
        return CriticConfig(n_layers=self.critic_layers, n_heads=self.critic_heads,
                            dims_per_head=self.critic_dims_per_head,
                            max_seq_len=self.episode_steps + 1,
                            use_layer_norm=self.critic_layer_norm,
                            dropout_rate=self.critic_dropout)

    def target_options(self) -> TargetOptions:
        return TargetOptions(variant=self.target_variant,
                             n_target_critics=self.n_critics,
                             use_target_network=self.use_target_network,
                             reanchor=self.use_init_cond)

    def trust_bounds(self) -> TrustRegionBounds | None:
        if not self.use_trust_region:
            return None
        return TrustRegionBounds(eps_mu=self.eps_mu, eps_sigma=self.eps_sigma)

    def fixed_segment_len(self) -> int:
        return self.segment_len if self.segment_len > 0 else self.episode_steps

    def to_flat(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = str(v).lower() if isinstance(v, bool) else str(v)
        return out


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat `key = value` lines into a string map; later keys win."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ValueError(f"{source}:{lineno}: empty key or value")
        out[key] = value
    return out


def _coerce(name: str, kind: type, raw: str):
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    return raw


def config_from_mapping(mapping: dict[str, str]) -> RunConfig:
    kinds = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    # dataclass field types arrive as strings under `from __future__ import annotations`
    types = {"str": str, "int": int, "float": float, "bool": bool}
    unknown = sorted(set(mapping) - set(kinds))
    if unknown:
        raise ValueError(f"unknown config keys {unknown}; valid keys: {sorted(kinds)}")
    kwargs = {key: _coerce(key, types[kinds[key]], raw) for key, raw in mapping.items()}
    return RunConfig(**kwargs)


def config_from_sources(path: str | None = None,
                        overrides: dict[str, str] | None = None,
                        env: dict[str, str] | None = None) -> RunConfig:
    """File values, then explicit overrides, then TOP_ERL_OUT for out_dir."""
    mapping: dict[str, str] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            mapping.update(parse_config_text(fh.read(), source=path))
    if overrides:
        mapping.update({k: v for k, v in overrides.items() if v is not None})
    env = os.environ if env is None else env
    if env.get("TOP_ERL_OUT"):
        mapping["out_dir"] = env["TOP_ERL_OUT"]
    return config_from_mapping(mapping)
