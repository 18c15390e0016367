"""Full-covariance Gaussian policy over MP parameters.

An MLP (two hidden layers, leaky-relu) maps the task state to the mean and
the flattened Cholesky factor of N(mu_w, Sigma_w). The diagonal goes through
softplus plus an optional hard std floor (min_std, default off); its head
bias starts at softplus^-1(init_std - min_std) so a fresh net emits the
configured exploration scale. The floor is the usual log-std clamp: it keeps
the behavior distribution wide enough that the replay buffer continues to
cover the neighbourhood the critic must rank, independent of how hard the
objective squeezes the raw output. Sampling is reparameterized (w = mu + L e)
so gradients flow into the network.

Trust region: closed-form projection of (mu, Sigma) back inside Mahalanobis /
squared-Frobenius bounds around an EMA old policy, differentiable end to end;
a penalty term pulls the raw outputs toward the projected ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T

DIAG_FLOOR = 1e-8
HEAD_SCALE = 0.01


@dataclass
class PolicyOutput:
    mu: object            # (B, d) DiffTensor or ndarray
    chol: object          # (B, d, d) lower triangular

    def sigma(self):
        if isinstance(self.chol, T.DiffTensor):
            return T.matmul(self.chol, T.swap_last(self.chol))
        return self.chol @ np.swapaxes(self.chol, -1, -2)


@dataclass(frozen=True)
class TrustRegionBounds:
    eps_mu: float = 0.005
    eps_sigma: float = 0.0005

    def __post_init__(self):
        if self.eps_mu <= 0 or self.eps_sigma <= 0:
            raise ValueError("trust region bounds must be positive")


def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))          # fix the sign ambiguity of QR
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class GaussianPolicy:
    """MLP emitting PolicyOutput; owns its named parameter tensors."""

    def __init__(self, state_dim: int, param_dim: int, hidden: int,
                 rng: np.random.Generator, name: str = "policy",
                 init_std: float = 1.0, min_std: float = 0.0):
        if init_std <= 0:
            raise ValueError("init_std must be positive")
        if not 0.0 <= min_std < init_std:
            raise ValueError("min_std must satisfy 0 <= min_std < init_std")
        self.min_std = float(min_std)
        self.state_dim = state_dim
        self.param_dim = param_dim
        self.hidden = hidden
        self.name = name
        d = param_dim
        self.n_lower = d * (d - 1) // 2
        self._tril_rows, self._tril_cols = np.tril_indices(d, -1)
        self._diag_idx = np.arange(d)

        gain = np.sqrt(2.0)           # leaky-relu hidden layers
        def p(arr, suffix):
            return T.parameter(arr, f"{name}/{suffix}")
        self.w1 = p(orthogonal(rng, state_dim, hidden, gain), "w1")
        self.b1 = p(np.zeros(hidden), "b1")
        self.w2 = p(orthogonal(rng, hidden, hidden, gain), "w2")
        self.b2 = p(np.zeros(hidden), "b2")
        self.w_mu = p(orthogonal(rng, hidden, d, HEAD_SCALE), "w_mu")
        self.b_mu = p(np.zeros(d), "b_mu")
        self.w_diag = p(orthogonal(rng, hidden, d, HEAD_SCALE), "w_diag")
        # softplus(bias) + min_std = init_std -> fresh net starts at the
        # configured exploration scale
        self.b_diag = p(np.full(d, np.log(np.expm1(init_std - min_std))), "b_diag")
        self.w_low = p(orthogonal(rng, hidden, self.n_lower, HEAD_SCALE)
                       if self.n_lower > 0 else np.zeros((hidden, 0)), "w_low")
        self.b_low = p(np.zeros(self.n_lower), "b_low")

    def parameters(self) -> list[T.DiffTensor]:
        return [self.w1, self.b1, self.w2, self.b2,
                self.w_mu, self.b_mu, self.w_diag, self.b_diag,
                self.w_low, self.b_low]

    def forward(self, states: np.ndarray) -> PolicyOutput:
        """states (B, S) or (S,) -> PolicyOutput with batch leading axis."""
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = states[None, :]
        B = states.shape[0]
        d = self.param_dim
        x = T.DiffTensor(states)
        h = T.leaky_relu(T.add(T.matmul(x, self.w1), self.b1))
        h = T.leaky_relu(T.add(T.matmul(h, self.w2), self.b2))
        mu = T.add(T.matmul(h, self.w_mu), self.b_mu)
        diag = T.add(T.softplus(T.add(T.matmul(h, self.w_diag), self.b_diag)),
                     DIAG_FLOOR + self.min_std)
        chol = T.scatter_fixed(diag, (B, d, d),
                               (slice(None), self._diag_idx, self._diag_idx))
        if self.n_lower > 0:
            low = T.add(T.matmul(h, self.w_low), self.b_low)
            chol = T.add(chol, T.scatter_fixed(
                low, (B, d, d), (slice(None), self._tril_rows, self._tril_cols)))
        if not (np.all(np.isfinite(mu.data)) and np.all(np.isfinite(chol.data))):
            raise FloatingPointError(f"{self.name}: non-finite policy output")
        return PolicyOutput(mu, chol)

    def clone(self) -> "GaussianPolicy":
        other = GaussianPolicy.__new__(GaussianPolicy)
        other.state_dim = self.state_dim
        other.param_dim = self.param_dim
        other.hidden = self.hidden
        other.name = self.name + "_old"
        other.min_std = self.min_std
        other.n_lower = self.n_lower
        other._tril_rows, other._tril_cols = self._tril_rows, self._tril_cols
        other._diag_idx = self._diag_idx
        for attr in ("w1", "b1", "w2", "b2", "w_mu", "b_mu",
                     "w_diag", "b_diag", "w_low", "b_low"):
            src = getattr(self, attr)
            setattr(other, attr, T.parameter(src.data.copy(), f"{other.name}/{attr}"))
        return other


def sample_reparameterized(out: PolicyOutput, noise: np.ndarray):
    """w = mu + L @ eps; differentiable when out carries DiffTensors."""
    mu, chol = out.mu, out.chol
    if isinstance(mu, T.DiffTensor) or isinstance(chol, T.DiffTensor):
        B, d = mu.shape
        eps = noise.reshape(B, d, 1)
        return T.add(mu, T.reshape(T.matmul(chol, eps), (B, d)))
    eps = noise.reshape(mu.shape[0], mu.shape[1], 1)
    return mu + (chol @ eps)[:, :, 0]


def _as_old_arrays(old: PolicyOutput) -> tuple[np.ndarray, np.ndarray]:
    mu = old.mu.data if isinstance(old.mu, T.DiffTensor) else np.asarray(old.mu)
    chol = old.chol.data if isinstance(old.chol, T.DiffTensor) else np.asarray(old.chol)
    return mu, chol


def mean_dissimilarity(mu, mu_old: np.ndarray, sigma_old_inv: np.ndarray):
    """Batched Mahalanobis distance (mu - mu_old)^T Sigma_old^-1 (mu - mu_old)."""
    if isinstance(mu, T.DiffTensor):
        B, d = mu.shape
        diff = T.reshape(T.sub(mu, mu_old), (B, 1, d))
        return T.reshape(T.sum_(T.mul(T.matmul(diff, sigma_old_inv), diff), axis=-1), (B,))
    diff = mu - mu_old
    return np.einsum("bi,bij,bj->b", diff, sigma_old_inv, diff)


def cov_dissimilarity(sigma, sigma_old: np.ndarray):
    """Batched squared Frobenius norm of Sigma - Sigma_old."""
    if isinstance(sigma, T.DiffTensor):
        diff = T.sub(sigma, sigma_old)
        return T.sum_(T.mul(diff, diff), axis=(-2, -1))
    diff = sigma - sigma_old
    return np.sum(diff * diff, axis=(-2, -1))


def project_trust_region(new: PolicyOutput, old: PolicyOutput,
                         bounds: TrustRegionBounds) -> PolicyOutput:
    """Scale (mu, Sigma) back inside the bounds around the old policy.

    Outside the mean bound: mu~ = mu_old + sqrt(eps_mu / d_m) (mu - mu_old);
    outside the covariance bound: Sigma~ = Sigma_old + sqrt(eps_S / d_c)
    (Sigma - Sigma_old), a convex combination and hence SPD. Identity inside.
    Differentiable; the branch choice is a constant of the forward values, so
    gradients are exact away from the boundary switch.
    """
    mu_old, chol_old = _as_old_arrays(old)
    try:
        np.linalg.cholesky(chol_old @ np.swapaxes(chol_old, -1, -2))
    except np.linalg.LinAlgError:
        raise ValueError("old covariance is not SPD") from None
    sigma_old = chol_old @ np.swapaxes(chol_old, -1, -2)
    sigma_old_inv = np.linalg.inv(sigma_old)

    mu, chol = new.mu, new.chol
    diff_path = isinstance(mu, T.DiffTensor)
    d_m = mean_dissimilarity(mu, mu_old, sigma_old_inv)
    sigma = new.sigma()
    d_c = cov_dissimilarity(sigma, sigma_old)

    if diff_path:
        B, d = mu.shape
        m_mask = (d_m.data > bounds.eps_mu).astype(np.float64)          # constants
        # masked denominator keeps the unused branch at sqrt(eps/eps) = 1
        denom_m = T.add(T.mul(d_m, m_mask), (1.0 - m_mask) * bounds.eps_mu)
        scale_m = T.reshape(T.sqrt(T.div(bounds.eps_mu, denom_m)), (B, 1))
        mu_p = T.add(mu_old, T.mul(scale_m, T.sub(mu, mu_old)))

        c_mask = (d_c.data > bounds.eps_sigma).astype(np.float64)
        denom_c = T.add(T.mul(d_c, c_mask), (1.0 - c_mask) * bounds.eps_sigma)
        scale_c = T.reshape(T.sqrt(T.div(bounds.eps_sigma, denom_c)), (B, 1, 1))
        sigma_p = T.add(sigma_old, T.mul(scale_c, T.sub(sigma, sigma_old)))
        return PolicyOutput(mu_p, T.cholesky(sigma_p))

    scale_m = np.where(d_m > bounds.eps_mu, np.sqrt(bounds.eps_mu / np.maximum(d_m, 1e-300)), 1.0)
    mu_p = mu_old + scale_m[:, None] * (mu - mu_old)
    scale_c = np.where(d_c > bounds.eps_sigma,
                       np.sqrt(bounds.eps_sigma / np.maximum(d_c, 1e-300)), 1.0)
    sigma_p = sigma_old + scale_c[:, None, None] * (sigma - sigma_old)
    return PolicyOutput(mu_p, np.linalg.cholesky(sigma_p))


def trust_region_penalty(new: PolicyOutput, old: PolicyOutput,
                         projected: PolicyOutput) -> T.DiffTensor:
    """Mean dissimilarity between raw and (detached) projected outputs.

    Pulls the network itself inside the region so the projection tends to
    become a no-op; the projected side is a constant here.
    """
    mu_old, chol_old = _as_old_arrays(old)
    sigma_old_inv = np.linalg.inv(chol_old @ np.swapaxes(chol_old, -1, -2))
    mu_p, chol_p = _as_old_arrays(projected)        # detach
    sigma_p = chol_p @ np.swapaxes(chol_p, -1, -2)
    d_m = mean_dissimilarity(new.mu, mu_p, sigma_old_inv)
    d_c = cov_dissimilarity(new.sigma(), sigma_p)
    return T.mean(T.add(d_m, d_c))


def ema_update_old_policy(current: list[T.DiffTensor], old: list[T.DiffTensor],
                          rate: float) -> None:
    """old <- (1 - rate) * old + rate * current, in place."""
    for cur, prev in zip(current, old):
        prev.data *= (1.0 - rate)
        prev.data += rate * cur.data
