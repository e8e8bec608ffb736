"""Chunk policies: the flow-matching base generator, the bounded edit
corrector, and the learnable entropy temperature.

The base policy regresses a velocity field transporting Gaussian noise to
action chunks along a linear interpolation path and samples by Euler
integration.  The edit policy emits a small tanh-bounded Gaussian
perturbation of the executed slice of a base chunk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from . import nn
from .rng import substream

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
# tanh saturates to exactly 1.0 in float64 near |u| ~ 19; clamping the
# pre-squash sample keeps every edit strictly inside the open bound.
U_CLIP = 8.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ChunkSpec:
    """Shape of policy output: H predicted steps, C executed, A dims each."""

    horizon: int
    execute: int
    action_dim: int
    low: tuple
    high: tuple

    def __post_init__(self):
        if not (1 <= self.execute <= self.horizon):
            raise ValueError(f"need 1 <= C <= H, got C={self.execute} H={self.horizon}")
        lo, hi = np.asarray(self.low, float), np.asarray(self.high, float)
        if lo.shape != (self.action_dim,) or hi.shape != (self.action_dim,):
            raise ValueError("bounds must have shape (action_dim,)")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
            raise ValueError("bounds must be finite with low < high")

    @property
    def chunk_dim(self) -> int:
        return self.horizon * self.action_dim

    @property
    def executed_dim(self) -> int:
        return self.execute * self.action_dim

    def chunk_low(self) -> np.ndarray:
        return np.tile(np.asarray(self.low, float), self.horizon)

    def chunk_high(self) -> np.ndarray:
        return np.tile(np.asarray(self.high, float), self.horizon)

    def executed_slice(self, chunk: np.ndarray) -> np.ndarray:
        return chunk[..., : self.executed_dim]

    @staticmethod
    def symmetric(horizon: int, execute: int, action_dim: int, bound: float = 1.0) -> "ChunkSpec":
        return ChunkSpec(
            horizon=horizon,
            execute=execute,
            action_dim=action_dim,
            low=tuple([-bound] * action_dim),
            high=tuple([bound] * action_dim),
        )


@dataclass
class FlowPolicy:
    spec: ChunkSpec
    net: nn.MlpParams  # (chunk_dim + 1 + obs_dim) -> chunk_dim
    target_net: nn.MlpParams
    euler_steps: int = 10

    @staticmethod
    def init(rng, spec: ChunkSpec, obs_dim: int, hidden=(128, 128), euler_steps: int = 10) -> "FlowPolicy":
        sizes = [spec.chunk_dim + 1 + obs_dim, *hidden, spec.chunk_dim]
        net = nn.init_mlp(rng, sizes, activation="relu", final_scale=0.01)
        target = nn.mlp_from_arrays(net, [a.copy() for a in nn.mlp_arrays(net)])
        return FlowPolicy(spec=spec, net=net, target_net=target, euler_steps=euler_steps)

    def update_target(self, tau: float) -> "FlowPolicy":
        return replace(self, target_net=nn.polyak_mlp(self.target_net, self.net, tau))


def flow_velocity(net: nn.MlpParams, z, tau, s):
    """v(z, tau, s); tau enters as one raw scalar feature."""
    x = ag.concat([z, tau, s], axis=-1)
    return nn.forward_mlp(net, x)


def cfm_loss(net: nn.MlpParams, s: np.ndarray, a_chunk: np.ndarray, z0: np.ndarray, tau: np.ndarray):
    """Velocity regression on the linear path z_tau = (1-tau) z0 + tau a.

    Batched: s (B, obs), a_chunk/z0 (B, H*A), tau (B,).  Returns the mean
    over the batch of the squared residual norm.  `net` may be traced.
    """
    tau_col = np.asarray(tau, float).reshape(-1, 1)
    z_tau = (1.0 - tau_col) * z0 + tau_col * a_chunk
    v = flow_velocity(net, z_tau, tau_col, s)
    resid = ag.sub(v, a_chunk - z0)
    return ag.mean_(ag.sum_(ag.square(resid), axis=1))


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return substream(int(seed), "flow-sample")


def sample_chunks_batch(
    flow: FlowPolicy, s: np.ndarray, n_per_state: int, rng, use_target: bool = False
) -> np.ndarray:
    """Euler-integrate the velocity field from z0 ~ N(0, I).

    s (B, obs) -> chunks (B, n_per_state, H*A), clipped to action bounds.
    Deterministic given the generator state.
    """
    rng = _as_generator(rng)
    net = flow.target_net if use_target else flow.net
    s = np.atleast_2d(np.asarray(s, float))
    b = s.shape[0]
    rows = b * n_per_state
    s_rep = np.repeat(s, n_per_state, axis=0)
    z = rng.standard_normal((rows, flow.spec.chunk_dim))
    k = flow.euler_steps
    for i in range(k):
        tau = np.full((rows, 1), i / k)
        v = flow_velocity(net, z, tau, s_rep)
        z = z + v / k
    z = np.clip(z, flow.spec.chunk_low(), flow.spec.chunk_high())
    return z.reshape(b, n_per_state, flow.spec.chunk_dim)


def sample_base_chunks(flow: FlowPolicy, s: np.ndarray, n: int, seed, use_target: bool = False) -> np.ndarray:
    """N chunks for a single observation; (n, H*A)."""
    return sample_chunks_batch(flow, np.atleast_2d(s), n, _as_generator(seed), use_target)[0]


@dataclass
class EditPolicy:
    spec: ChunkSpec
    net: nn.MlpParams  # (obs_dim + C*A) -> 2 * C*A  (mean, log-std)
    beta: float

    @staticmethod
    def init(rng, spec: ChunkSpec, obs_dim: int, beta: float, hidden=(256, 256, 256)) -> "EditPolicy":
        sizes = [obs_dim + spec.executed_dim, *hidden, 2 * spec.executed_dim]
        net = nn.init_mlp(rng, sizes, activation="relu", final_scale=0.01)
        return EditPolicy(spec=spec, net=net, beta=beta)


def edit_distribution(edit_net: nn.MlpParams, executed_dim: int, s, base_executed):
    """Mean and clamped log-std of the pre-squash Gaussian."""
    out = nn.forward_mlp(edit_net, ag.concat([s, base_executed], axis=-1))
    mean = ag.slice_last(out, 0, executed_dim)
    log_std = ag.clip(ag.slice_last(out, executed_dim, 2 * executed_dim), LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std


def edit_sample_traced(edit: EditPolicy, s, base_executed, noise: np.ndarray):
    """Reparameterized edit sample and its log-probability.

    noise is an externally drawn standard normal (B, C*A); pass the edit
    net as a traced MlpParams inside an EditPolicy to get gradients.
    Returns (edit, log_prob) where edit = beta * tanh(u) with u clamped.
    """
    d = edit.spec.executed_dim
    mean, log_std = edit_distribution(edit.net, d, s, base_executed)
    std = ag.exp(log_std)
    u = ag.clip(ag.add(mean, ag.mul(std, noise)), -U_CLIP, U_CLIP)
    t = ag.tanh(u)
    out = ag.mul(t, edit.beta)
    # Gaussian log-density of u, minus the tanh/scale change of variables.
    z = ag.div(ag.sub(u, mean), std)
    log_n = ag.sum_(ag.sub(ag.mul(ag.square(z), -0.5), ag.add(log_std, _HALF_LOG_2PI)), axis=-1)
    jac = ag.sum_(ag.log(ag.sub(1.0, ag.square(t))), axis=-1)
    log_prob = ag.sub(log_n, ag.add(jac, d * math.log(edit.beta)))
    return out, log_prob


def sample_edit(edit: EditPolicy, s: np.ndarray, base_executed: np.ndarray, seed) -> tuple[np.ndarray, np.ndarray]:
    """Draw one edit per row; returns (edit (B, C*A), log_prob (B,))."""
    rng = _as_generator(seed) if not isinstance(seed, np.random.Generator) else seed
    s = np.atleast_2d(np.asarray(s, float))
    base = np.atleast_2d(np.asarray(base_executed, float))
    noise = rng.standard_normal((s.shape[0], edit.spec.executed_dim))
    out, log_prob = edit_sample_traced(edit, s, base, noise)
    return ag.value_of(out), ag.value_of(log_prob)


def edit_log_prob(edit: EditPolicy, s: np.ndarray, base_executed: np.ndarray, edit_vec: np.ndarray) -> np.ndarray:
    """Log-density of a given edit under the current policy."""
    d = edit.spec.executed_dim
    s = np.atleast_2d(np.asarray(s, float))
    base = np.atleast_2d(np.asarray(base_executed, float))
    e = np.atleast_2d(np.asarray(edit_vec, float))
    mean, log_std = edit_distribution(edit.net, d, s, base)
    std = np.exp(log_std)
    t = np.clip(e / edit.beta, -1 + 1e-12, 1 - 1e-12)
    u = np.arctanh(t)
    z = (u - mean) / std
    log_n = (-0.5 * z * z - log_std - _HALF_LOG_2PI).sum(axis=-1)
    jac = np.log(1.0 - t * t).sum(axis=-1) + d * math.log(edit.beta)
    return log_n - jac


def edit_policy_loss(edit: EditPolicy, q_select_fn, s: np.ndarray, base_executed: np.ndarray, alpha: float, noise: np.ndarray):
    """-(mean Q(s, base + edit) - alpha * log pi(edit | s, base)).

    `q_select_fn(s, chunk_node)` must evaluate the critic with its own
    parameters held constant so gradients reach only the edit network.
    """
    out, log_prob = edit_sample_traced(edit, s, base_executed, noise)
    edited = ag.add(base_executed, out)
    q = q_select_fn(s, edited)
    obj = ag.sub(q, ag.mul(log_prob, alpha))
    return ag.neg(ag.mean_(obj)), ag.value_of(log_prob)


@dataclass
class Temperature:
    log_alpha: np.ndarray  # scalar, shape ()
    target_entropy: float

    @staticmethod
    def init(executed_dim: int, beta: float, alpha0: float = 1.0) -> "Temperature":
        # Entropy convention of -1 nat per dim for unit-bounded actions,
        # shifted by log(beta) per dim for the beta-scaled edit range.
        target = executed_dim * (math.log(beta) - 1.0)
        return Temperature(log_alpha=np.array(math.log(alpha0)), target_entropy=target)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))


def temperature_loss(log_alpha, log_probs: np.ndarray, target_entropy: float):
    """-log_alpha * mean(log_prob + target_entropy); log-probs detached."""
    err = float(np.mean(np.asarray(log_probs) + target_entropy))
    return ag.mul(ag.neg(log_alpha), err)
