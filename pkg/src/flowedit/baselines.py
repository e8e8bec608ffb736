"""Comparison methods sharing the env/replay/critic plumbing:

- interactive imitation (supervised updates on demo + intervention data
  only, no reward signal),
- from-scratch max-Q learning with a Gaussian policy and symmetric
  demo/online sampling (single-step actions),
- latent-noise steering of a frozen flow prior,
- plus plain imitation-pretrained evaluation handled by the agent module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from . import nn
from .critic import QEnsemble, critic_loss, polyak_update_targets, q_all, q_select_traced, td_target
from .policies import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    U_CLIP,
    ChunkSpec,
    FlowPolicy,
    Temperature,
    cfm_loss,
    flow_velocity,
    temperature_loss,
)
from .replay import ReplayBuffer

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


# --- tanh-squashed Gaussian head (shared by the two SAC-style baselines) ----

def _squashed_sample(net: nn.MlpParams, x, out_dim: int, scale: float, noise: np.ndarray):
    """a = scale * tanh(u), u ~ N(mean, std); returns (a, log_prob) nodes."""
    out = nn.forward_mlp(net, x)
    mean = ag.slice_last(out, 0, out_dim)
    log_std = ag.clip(ag.slice_last(out, out_dim, 2 * out_dim), LOG_STD_MIN, LOG_STD_MAX)
    std = ag.exp(log_std)
    u = ag.clip(ag.add(mean, ag.mul(std, noise)), -U_CLIP, U_CLIP)
    t = ag.tanh(u)
    a = ag.mul(t, scale)
    z = ag.div(ag.sub(u, mean), std)
    log_n = ag.sum_(ag.sub(ag.mul(ag.square(z), -0.5), ag.add(log_std, _HALF_LOG_2PI)), axis=-1)
    jac = ag.sum_(ag.log(ag.sub(1.0, ag.square(t))), axis=-1)
    log_prob = ag.sub(log_n, ag.add(jac, out_dim * math.log(scale)))
    return a, log_prob


@dataclass
class GaussianPolicy:
    """s -> tanh-squashed diagonal Gaussian over the executed chunk."""

    spec: ChunkSpec
    net: nn.MlpParams  # obs -> 2 * C*A

    @staticmethod
    def init(rng, spec: ChunkSpec, obs_dim: int, hidden=(256, 256, 256)) -> "GaussianPolicy":
        net = nn.init_mlp(rng, [obs_dim, *hidden, 2 * spec.executed_dim], activation="relu", final_scale=0.01)
        return GaussianPolicy(spec=spec, net=net)

    def sample(self, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, float))
        noise = rng.standard_normal((s.shape[0], self.spec.executed_dim))
        a, _ = _squashed_sample(self.net, s, self.spec.executed_dim, 1.0, noise)
        return ag.value_of(a)


@dataclass
class NoisePolicy:
    """s -> Gaussian over the flow's initial-noise space, mean in [-3, 3]."""

    spec: ChunkSpec
    net: nn.MlpParams  # obs -> 2 * H*A
    scale: float = 3.0

    @staticmethod
    def init(rng, spec: ChunkSpec, obs_dim: int, hidden=(256, 256, 256)) -> "NoisePolicy":
        net = nn.init_mlp(rng, [obs_dim, *hidden, 2 * spec.chunk_dim], activation="relu", final_scale=0.01)
        return NoisePolicy(spec=spec, net=net)

    def sample(self, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, float))
        noise = rng.standard_normal((s.shape[0], self.spec.chunk_dim))
        z0, _ = _squashed_sample(self.net, s, self.spec.chunk_dim, self.scale, noise)
        return ag.value_of(z0)


def flow_integrate(net: nn.MlpParams, spec: ChunkSpec, z0, s, k: int):
    """Euler integration usable traced (z0 as Node) or plain; clips to
    symmetric bounds."""
    bound = float(np.asarray(spec.high)[0])
    rows = ag.value_of(z0).shape[0]
    z = z0
    for i in range(k):
        tau = np.full((rows, 1), i / k)
        v = flow_velocity(net, z, tau, s)
        z = ag.add(z, ag.mul(v, 1.0 / k))
    return ag.clip(z, -bound, bound)


# --- interactive imitation ---------------------------------------------------

def hgdagger_eligible(replay: ReplayBuffer) -> list:
    """Demo transitions plus any transition with an intervention mask set.
    Rewards never enter this path."""
    return [
        (t.obs, t.chunk)
        for t in replay.iter_all()
        if t.source == "demo" or bool(np.any(t.mask))
    ]


def hgdagger_update(
    flow: FlowPolicy,
    opt: nn.AdamState,
    replay: ReplayBuffer,
    rng: np.random.Generator,
    batch_size: int = 64,
    lr: float = 3e-4,
) -> tuple[FlowPolicy, nn.AdamState, int]:
    """One supervised flow update restricted to demo/intervention data.

    Returns (flow, opt, n_eligible); a replay with no eligible data is a
    no-op.
    """
    eligible = hgdagger_eligible(replay)
    if not eligible:
        return flow, opt, 0
    idx = rng.integers(0, len(eligible), size=batch_size)
    s = np.stack([eligible[i][0] for i in idx])
    a = np.stack([eligible[i][1] for i in idx])
    z0 = rng.standard_normal(a.shape)
    tau = rng.uniform(0, 1, a.shape[0])
    traced, leaves = nn.trace_mlp(flow.net)
    loss = cfm_loss(traced, s, a, z0, tau)
    grads = nn.collect_grads(ag.backward(loss), leaves)
    arrays, opt = nn.adam_step(opt, nn.mlp_arrays(flow.net), grads, lr)
    return replace(flow, net=nn.mlp_from_arrays(flow.net, arrays)), opt, len(eligible)


# --- from-scratch max-Q with demos -------------------------------------------

@dataclass
class RlpdState:
    policy: GaussianPolicy
    critic: QEnsemble
    temperature: Temperature
    opt_policy: nn.AdamState
    opt_critic: list
    opt_alpha: nn.AdamState
    entropy_in_backup: bool = False  # backups carry no entropy term

    @staticmethod
    def init(rng_seed_fn, spec: ChunkSpec, obs_dim: int, config) -> "RlpdState":
        policy = GaussianPolicy.init(rng_seed_fn("rlpd-pi"), spec, obs_dim, hidden=config.edit_hidden)
        critic = QEnsemble.init(
            rng_seed_fn("rlpd-q"),
            obs_dim,
            spec.executed_dim,
            ensemble_size=config.ensemble_size,
            subsample=config.target_subsample,
            gamma=config.gamma,
            tau_q=config.tau_q,
            hidden=config.critic_hidden,
        )
        temperature = Temperature.init(spec.executed_dim, beta=1.0, alpha0=0.1)
        return RlpdState(
            policy=policy,
            critic=critic,
            temperature=temperature,
            opt_policy=nn.adam_init(nn.mlp_arrays(policy.net)),
            opt_critic=[nn.adam_init(nn.mlp_arrays(n)) for n in critic.nets],
            opt_alpha=nn.adam_init([np.zeros(())]),
        )


def rlpd_update(state: RlpdState, replay: ReplayBuffer, rng: np.random.Generator, batch_size: int = 64, lr: float = 3e-4, execute: int = 1) -> tuple[RlpdState, dict]:
    """SAC-style update on symmetric 50/50 demo/online batches; the TD
    backup has no entropy bonus."""
    batch = replay.sample_split(batch_size, rng)
    gamma = state.critic.gamma
    s = np.stack([t.obs for t in batch])
    a = np.stack([t.chunk for t in batch])
    s_next = np.stack([t.next_obs for t in batch])
    reward_agg = np.array([t.reward_agg(gamma) for t in batch])
    no_boot = np.array([float(t.done or t.truncated) for t in batch])

    # next actions from the current policy (no entropy term in the target)
    next_a = state.policy.sample(s_next, rng)
    targets = td_target(state.critic, reward_agg, s_next, next_a, no_boot, gamma, execute, rng)

    new_nets, new_opts, closses = [], [], []
    for net, opt in zip(state.critic.nets, state.opt_critic):
        traced, leaves = nn.trace_mlp(net)
        loss = critic_loss([traced], s, a, targets)
        closses.append(float(ag.value_of(loss)))
        grads = nn.collect_grads(ag.backward(loss), leaves)
        arrays, opt = nn.adam_step(opt, nn.mlp_arrays(net), grads, lr)
        new_nets.append(nn.mlp_from_arrays(net, arrays))
        new_opts.append(opt)
    critic = replace(state.critic, nets=new_nets)

    noise = rng.standard_normal((batch_size, state.policy.spec.executed_dim))
    traced_pi, pi_leaves = nn.trace_mlp(state.policy.net)
    a_node, log_prob = _squashed_sample(traced_pi, s, state.policy.spec.executed_dim, 1.0, noise)
    q = q_select_traced(critic, s, a_node)
    alpha = state.temperature.alpha
    pi_loss = ag.neg(ag.mean_(ag.sub(q, ag.mul(log_prob, alpha))))
    grads = nn.collect_grads(ag.backward(pi_loss), pi_leaves)
    arrays, opt_policy = nn.adam_step(state.opt_policy, nn.mlp_arrays(state.policy.net), grads, lr)
    policy = replace(state.policy, net=nn.mlp_from_arrays(state.policy.net, arrays))

    log_alpha = ag.leaf(state.temperature.log_alpha)
    tloss = temperature_loss(log_alpha, ag.value_of(log_prob), state.temperature.target_entropy)
    tgrad = ag.grad_for(ag.backward(tloss), log_alpha)
    (new_log_alpha,), opt_alpha = nn.adam_step(state.opt_alpha, [state.temperature.log_alpha], [tgrad], lr)

    critic = polyak_update_targets(critic)
    new_state = replace(
        state,
        policy=policy,
        critic=critic,
        temperature=replace(state.temperature, log_alpha=new_log_alpha),
        opt_policy=opt_policy,
        opt_critic=new_opts,
        opt_alpha=opt_alpha,
    )
    stats = {"critic_loss": float(np.mean(closses)), "pi_loss": float(ag.value_of(pi_loss)), "alpha": new_state.temperature.alpha}
    return new_state, stats


# --- latent-noise steering ----------------------------------------------------

@dataclass
class DsrlState:
    noise_policy: NoisePolicy
    critic: QEnsemble
    temperature: Temperature
    frozen_flow: FlowPolicy
    opt_policy: nn.AdamState
    opt_critic: list
    opt_alpha: nn.AdamState

    @staticmethod
    def init(rng_seed_fn, flow: FlowPolicy, obs_dim: int, config) -> "DsrlState":
        spec = flow.spec
        noise_policy = NoisePolicy.init(rng_seed_fn("dsrl-pi"), spec, obs_dim, hidden=config.edit_hidden)
        critic = QEnsemble.init(
            rng_seed_fn("dsrl-q"),
            obs_dim,
            spec.executed_dim,
            ensemble_size=config.ensemble_size,
            subsample=config.target_subsample,
            gamma=config.gamma,
            tau_q=config.tau_q,
            hidden=config.critic_hidden,
        )
        temperature = Temperature.init(spec.chunk_dim, beta=1.0, alpha0=0.1)
        return DsrlState(
            noise_policy=noise_policy,
            critic=critic,
            temperature=temperature,
            frozen_flow=flow,
            opt_policy=nn.adam_init(nn.mlp_arrays(noise_policy.net)),
            opt_critic=[nn.adam_init(nn.mlp_arrays(n)) for n in critic.nets],
            opt_alpha=nn.adam_init([np.zeros(())]),
        )

    def act(self, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Chunk produced by steering the frozen flow's input noise."""
        s2 = np.atleast_2d(np.asarray(s, float))
        z0 = self.noise_policy.sample(s2, rng)
        chunk = flow_integrate(self.frozen_flow.net, self.frozen_flow.spec, z0, s2, self.frozen_flow.euler_steps)
        return ag.value_of(chunk)


def dsrl_update(state: DsrlState, replay: ReplayBuffer, rng: np.random.Generator, batch_size: int = 64, lr: float = 3e-4, execute: int | None = None) -> tuple[DsrlState, dict]:
    """SAC update in the prior's noise space; flow parameters stay frozen,
    gradients flow through the integration into the noise policy.  No
    intervention pathway exists in this method."""
    spec = state.noise_policy.spec
    execute = spec.execute if execute is None else execute
    batch = replay.sample_batch(batch_size, rng)
    gamma = state.critic.gamma
    s = np.stack([t.obs for t in batch])
    a = np.stack([t.chunk for t in batch])
    s_next = np.stack([t.next_obs for t in batch])
    reward_agg = np.array([t.reward_agg(gamma) for t in batch])
    no_boot = np.array([float(t.done or t.truncated) for t in batch])

    next_chunk = state.act(s_next, rng)[:, : spec.executed_dim]
    targets = td_target(state.critic, reward_agg, s_next, next_chunk, no_boot, gamma, execute, rng)

    new_nets, new_opts, closses = [], [], []
    for net, opt in zip(state.critic.nets, state.opt_critic):
        traced, leaves = nn.trace_mlp(net)
        loss = critic_loss([traced], s, a, targets)
        closses.append(float(ag.value_of(loss)))
        grads = nn.collect_grads(ag.backward(loss), leaves)
        arrays, opt = nn.adam_step(opt, nn.mlp_arrays(net), grads, lr)
        new_nets.append(nn.mlp_from_arrays(net, arrays))
        new_opts.append(opt)
    critic = replace(state.critic, nets=new_nets)

    noise = rng.standard_normal((batch_size, spec.chunk_dim))
    traced_pi, pi_leaves = nn.trace_mlp(state.noise_policy.net)
    z0, log_prob = _squashed_sample(traced_pi, s, spec.chunk_dim, state.noise_policy.scale, noise)
    chunk = flow_integrate(state.frozen_flow.net, spec, z0, s, state.frozen_flow.euler_steps)
    exec_node = ag.slice_last(chunk, 0, spec.executed_dim)
    q = q_select_traced(critic, s, exec_node)
    alpha = state.temperature.alpha
    pi_loss = ag.neg(ag.mean_(ag.sub(q, ag.mul(log_prob, alpha))))
    grads = nn.collect_grads(ag.backward(pi_loss), pi_leaves)
    arrays, opt_policy = nn.adam_step(state.opt_policy, nn.mlp_arrays(state.noise_policy.net), grads, lr)
    noise_policy = replace(state.noise_policy, net=nn.mlp_from_arrays(state.noise_policy.net, arrays))

    log_alpha = ag.leaf(state.temperature.log_alpha)
    tloss = temperature_loss(log_alpha, ag.value_of(log_prob), state.temperature.target_entropy)
    tgrad = ag.grad_for(ag.backward(tloss), log_alpha)
    (new_log_alpha,), opt_alpha = nn.adam_step(state.opt_alpha, [state.temperature.log_alpha], [tgrad], lr)

    critic = polyak_update_targets(critic)
    new_state = replace(
        state,
        noise_policy=noise_policy,
        critic=critic,
        temperature=replace(state.temperature, log_alpha=new_log_alpha),
        opt_policy=opt_policy,
        opt_critic=new_opts,
        opt_alpha=opt_alpha,
    )
    stats = {"critic_loss": float(np.mean(closses)), "pi_loss": float(ag.value_of(pi_loss)), "alpha": new_state.temperature.alpha}
    return new_state, stats
