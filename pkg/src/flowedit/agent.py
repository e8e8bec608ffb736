"""The value-argmax chunk policy and its training loop.

Per decision the base flow draws N stochastic chunks, the edit policy
perturbs each executed slice, and the executed candidate is the one with
the highest ensemble-mean value among all 2N (deterministic top-Q, no
softmax).  Training interleaves critic TD updates, edit-policy value
ascent, temperature adaptation, and supervised flow updates on replay.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from . import nn
from .critic import QEnsemble, critic_loss, polyak_update_targets, q_all, q_select, q_select_traced, td_target
from .policies import (
    ChunkSpec,
    EditPolicy,
    FlowPolicy,
    Temperature,
    cfm_loss,
    edit_policy_loss,
    sample_chunks_batch,
    temperature_loss,
)
from .replay import ChunkTransition, ReplayBuffer, Trajectory, slice_trajectory
from .rng import derive_seed, substream

CADENCES = ("per-step", "per-episode", "per-episode-batch")


@dataclass
class AgentConfig:
    task: str = "pointinsert"
    horizon: int = 8
    execute: int = 8
    n_candidates: int = 8          # base chunks per decision; 2N total
    edit_scale: float = 0.1
    utd: int = 20
    batch_size: int = 64
    gamma: float = 0.99
    cadence: str = "per-episode"
    updates_per_episode: int = 4
    episode_batch: int = 1
    sft_threshold: float = 0.4
    train_step_budget: int = 20_000
    lr: float = 3e-4
    tau_q: float = 5e-3
    tau_pi: float = 1e-3
    ensemble_size: int = 10
    target_subsample: int = 2
    euler_steps: int = 10
    alpha_init: float = 1.0
    flow_hidden: tuple = (128, 128)
    edit_hidden: tuple = (256, 256, 256)
    critic_hidden: tuple = (256, 256, 256)
    replay_capacity: int = 1_000_000

    def validate(self) -> "AgentConfig":
        counts = dict(
            horizon=self.horizon,
            execute=self.execute,
            n_candidates=self.n_candidates,
            utd=self.utd,
            batch_size=self.batch_size,
            updates_per_episode=self.updates_per_episode,
            episode_batch=self.episode_batch,
            ensemble_size=self.ensemble_size,
            target_subsample=self.target_subsample,
            euler_steps=self.euler_steps,
        )
        for name, v in counts.items():
            if v < 1:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.cadence not in CADENCES:
            raise ValueError(f"cadence must be one of {CADENCES}, got {self.cadence!r}")
        if self.horizon != self.execute:
            # The flow trains on executed chunks from replay, which only
            # hold C steps; online training therefore requires H == C.
            raise ValueError("training requires horizon == execute (H == C)")
        return self


@dataclass
class Candidate:
    chunk: np.ndarray       # (H*A,)
    executed: np.ndarray    # (C*A,)
    origin: str             # "base" | "edited"
    value: float


@dataclass
class TrainStats:
    step: int
    critic_loss: float = 0.0
    edit_loss: float = 0.0
    cfm_loss: float = 0.0
    alpha: float = 0.0
    q_mean: float = 0.0
    temperature_loss: float = 0.0
    skipped: bool = False

    def record(self) -> dict:
        return {
            "step": self.step,
            "critic_loss": self.critic_loss,
            "edit_loss": self.edit_loss,
            "cfm_loss": self.cfm_loss,
            "alpha": self.alpha,
            "q_mean": self.q_mean,
        }


@dataclass
class AgentState:
    config: AgentConfig
    spec: ChunkSpec
    obs_dim: int
    flow: FlowPolicy
    edit: EditPolicy
    critic: QEnsemble
    temperature: Temperature
    opt_flow: nn.AdamState
    opt_edit: nn.AdamState
    opt_critic: list
    opt_alpha: nn.AdamState
    train_steps: int = 0

    @staticmethod
    def init(config: AgentConfig, obs_dim: int, seed: int, action_dim: int | None = None) -> "AgentState":
        config.validate()
        if action_dim is None:
            action_dim = _action_dim_for(config.task)
        spec = ChunkSpec.symmetric(config.horizon, config.execute, action_dim)
        flow = FlowPolicy.init(
            substream(seed, "init-flow"), spec, obs_dim, hidden=config.flow_hidden, euler_steps=config.euler_steps
        )
        edit = EditPolicy.init(
            substream(seed, "init-edit"), spec, obs_dim, beta=config.edit_scale, hidden=config.edit_hidden
        )
        critic = QEnsemble.init(
            substream(seed, "init-critic"),
            obs_dim,
            spec.executed_dim,
            ensemble_size=config.ensemble_size,
            subsample=config.target_subsample,
            gamma=config.gamma,
            tau_q=config.tau_q,
            hidden=config.critic_hidden,
        )
        temperature = Temperature.init(spec.executed_dim, config.edit_scale, alpha0=config.alpha_init)
        return AgentState(
            config=config,
            spec=spec,
            obs_dim=obs_dim,
            flow=flow,
            edit=edit,
            critic=critic,
            temperature=temperature,
            opt_flow=nn.adam_init(nn.mlp_arrays(flow.net)),
            opt_edit=nn.adam_init(nn.mlp_arrays(edit.net)),
            opt_critic=[nn.adam_init(nn.mlp_arrays(n)) for n in critic.nets],
            opt_alpha=nn.adam_init([np.zeros(())]),
        )


def _action_dim_for(task: str) -> int:
    from .envs import make_env

    return make_env(task).spec.action_dim


def select_chunk(
    flow: FlowPolicy,
    edit: EditPolicy,
    critic: QEnsemble,
    s: np.ndarray,
    seed,
    n: int = 8,
    use_target: bool = False,
) -> tuple[Candidate, list[Candidate]]:
    """Sample N base chunks and one edit each; return the value argmax.

    Candidates are ordered [base_0..base_{N-1}, edited_0..edited_{N-1}];
    ties break to the lowest index.  With use_target=True the target flow
    generates bases and target networks score (the TD backup flavor).
    """
    rng = seed if isinstance(seed, np.random.Generator) else substream(int(seed), "select")
    s = np.asarray(s, float).reshape(1, -1)
    chosen, all_chunks, all_exec, values = _select_batch(flow, edit, critic, s, n, rng, use_target)
    cands = [
        Candidate(
            chunk=all_chunks[0, j].copy(),
            executed=all_exec[0, j].copy(),
            origin="base" if j < n else "edited",
            value=float(values[0, j]),
        )
        for j in range(2 * n)
    ]
    return cands[int(chosen[0])], cands


def _select_batch(
    flow: FlowPolicy,
    edit: EditPolicy,
    critic: QEnsemble,
    s: np.ndarray,
    n: int,
    rng: np.random.Generator,
    use_target: bool,
):
    """Vectorized candidate generation + scoring for B observations.

    Returns (chosen index (B,), chunks (B, 2N, H*A), executed slices
    (B, 2N, C*A), values (B, 2N)).
    """
    b = s.shape[0]
    spec = flow.spec
    bases = sample_chunks_batch(flow, s, n, rng, use_target=use_target)  # (B, N, H*A)
    base_exec = bases[:, :, : spec.executed_dim].reshape(b * n, -1)
    s_rep = np.repeat(s, n, axis=0)
    from .policies import sample_edit

    edits, _ = sample_edit(edit, s_rep, base_exec, rng)
    edited = bases.reshape(b * n, -1).copy()
    edited[:, : spec.executed_dim] += edits
    all_chunks = np.concatenate([bases, edited.reshape(b, n, -1)], axis=1)  # (B, 2N, H*A)
    all_exec = all_chunks[:, :, : spec.executed_dim]
    s_all = np.repeat(s, 2 * n, axis=0)
    values = q_select(critic, s_all, all_exec.reshape(b * 2 * n, -1), use_target=use_target)
    values = values.reshape(b, 2 * n)
    chosen = values.argmax(axis=1)  # first maximum: lowest-index tie-break
    return chosen, all_chunks, all_exec, values


def select_executed_batch(state: AgentState, s: np.ndarray, rng, use_target: bool) -> np.ndarray:
    """(B, C*A) value-argmax executed slices; used for TD backups."""
    chosen, _, all_exec, _ = _select_batch(
        state.flow, state.edit, state.critic, np.atleast_2d(s), state.config.n_candidates, rng, use_target
    )
    return all_exec[np.arange(all_exec.shape[0]), chosen]


def _batch_arrays(batch: list[ChunkTransition], gamma: float):
    s = np.stack([t.obs for t in batch])
    chunk = np.stack([t.chunk for t in batch])
    s_next = np.stack([t.next_obs for t in batch])
    reward_agg = np.array([t.reward_agg(gamma) for t in batch])
    no_bootstrap = np.array([float(t.done or t.truncated) for t in batch])
    return s, chunk, s_next, reward_agg, no_bootstrap


def train_step(state: AgentState, replay: ReplayBuffer, rng: np.random.Generator) -> tuple[AgentState, TrainStats]:
    """One gradient step each: critic ensemble, edit policy, temperature,
    base flow; then Polyak target updates."""
    cfg = state.config
    step = state.train_steps + 1
    if len(replay) < cfg.batch_size:
        return state, TrainStats(step=state.train_steps, skipped=True)

    batch = replay.sample_batch(cfg.batch_size, rng)
    s, chunk, s_next, reward_agg, no_bootstrap = _batch_arrays(batch, cfg.gamma)

    # -- critic ------------------------------------------------------------
    next_exec = select_executed_batch(state, s_next, rng, use_target=True)
    targets = td_target(
        state.critic, reward_agg, s_next, next_exec, no_bootstrap, cfg.gamma, cfg.execute, rng
    )
    q_mean = float(np.mean(q_select(state.critic, s, chunk)))
    new_nets = []
    new_opt_critic = []
    closses = []
    for net, opt in zip(state.critic.nets, state.opt_critic):
        traced, leaves = nn.trace_mlp(net)
        loss = critic_loss([traced], s, chunk, targets)
        closses.append(float(ag.value_of(loss)))
        grads = nn.collect_grads(ag.backward(loss), leaves)
        arrays, opt2 = nn.adam_step(opt, nn.mlp_arrays(net), grads, cfg.lr)
        new_nets.append(nn.mlp_from_arrays(net, arrays))
        new_opt_critic.append(opt2)
    critic = replace(state.critic, nets=new_nets)

    # -- edit policy ---------------------------------------------------------
    noise = rng.standard_normal((cfg.batch_size, state.spec.executed_dim))
    base_exec = chunk  # replay chunks are the executed slices
    traced_edit, edit_leaves = nn.trace_mlp(state.edit.net)
    alpha = state.temperature.alpha
    eloss, log_probs = edit_policy_loss(
        replace(state.edit, net=traced_edit),
        lambda s_in, a_node: q_select_traced(critic, s_in, a_node),
        s,
        base_exec,
        alpha,
        noise,
    )
    egrads = nn.collect_grads(ag.backward(eloss), edit_leaves)
    earrays, opt_edit = nn.adam_step(state.opt_edit, nn.mlp_arrays(state.edit.net), egrads, cfg.lr)
    edit = replace(state.edit, net=nn.mlp_from_arrays(state.edit.net, earrays))

    # -- temperature ---------------------------------------------------------
    log_alpha = ag.leaf(state.temperature.log_alpha)
    tloss = temperature_loss(log_alpha, log_probs, state.temperature.target_entropy)
    tgrad = ag.grad_for(ag.backward(tloss), log_alpha)
    (new_log_alpha,), opt_alpha = nn.adam_step(
        state.opt_alpha, [state.temperature.log_alpha], [tgrad], cfg.lr
    )
    temperature = replace(state.temperature, log_alpha=new_log_alpha)

    # -- base flow (supervised on replay chunks) ------------------------------
    z0 = rng.standard_normal((cfg.batch_size, state.spec.chunk_dim))
    tau = rng.uniform(0.0, 1.0, cfg.batch_size)
    traced_flow, flow_leaves = nn.trace_mlp(state.flow.net)
    floss = cfm_loss(traced_flow, s, chunk, z0, tau)
    fgrads = nn.collect_grads(ag.backward(floss), flow_leaves)
    farrays, opt_flow = nn.adam_step(state.opt_flow, nn.mlp_arrays(state.flow.net), fgrads, cfg.lr)
    flow = replace(state.flow, net=nn.mlp_from_arrays(state.flow.net, farrays))

    # -- target updates --------------------------------------------------------
    critic = polyak_update_targets(critic, cfg.tau_q)
    flow = flow.update_target(cfg.tau_pi)

    new_state = replace(
        state,
        flow=flow,
        edit=edit,
        critic=critic,
        temperature=temperature,
        opt_flow=opt_flow,
        opt_edit=opt_edit,
        opt_critic=new_opt_critic,
        opt_alpha=opt_alpha,
        train_steps=step,
    )
    stats = TrainStats(
        step=step,
        critic_loss=float(np.mean(closses)),
        edit_loss=float(ag.value_of(eloss)),
        cfm_loss=float(ag.value_of(floss)),
        alpha=temperature.alpha,
        q_mean=q_mean,
        temperature_loss=float(ag.value_of(tloss)),
    )
    return new_state, stats


class UpdateScheduler:
    """Maps environment progress to train-step counts per the cadence."""

    def __init__(self, config: AgentConfig):
        self.config = config
        self._episodes_pending = 0

    def on_env_step(self) -> int:
        return self.config.utd if self.config.cadence == "per-step" else 0

    def on_episode_end(self) -> int:
        cfg = self.config
        if cfg.cadence == "per-episode":
            return cfg.updates_per_episode
        if cfg.cadence == "per-episode-batch":
            self._episodes_pending += 1
            if self._episodes_pending >= cfg.episode_batch:
                n = self._episodes_pending * cfg.updates_per_episode
                self._episodes_pending = 0
                return n
        return 0


def run_updates(scheduler: UpdateScheduler, event: str, trainer) -> int:
    """Run the train steps owed for `event` in {"env-step", "episode-end"}."""
    n = scheduler.on_env_step() if event == "env-step" else scheduler.on_episode_end()
    for _ in range(n):
        trainer()
    return n


@dataclass
class EvalResult:
    successes: int
    episodes: int
    mean_episode_time: float  # seconds at 10 Hz
    mean_steps: float

    @property
    def rate(self) -> float:
        return self.successes / self.episodes


def evaluate(state: AgentState, env, episodes: int = 30, seed: int = 0) -> EvalResult:
    """Greedy rollouts with value-argmax selection; interventions off."""
    wins = 0
    steps = []
    for ep in range(episodes):
        obs = env.reset(seed=derive_seed(seed, "eval-reset", ep))
        rng = substream(seed, "eval-select", ep)
        done, r = False, 0.0
        while not done:
            chosen, _ = select_chunk(
                state.flow, state.edit, state.critic, obs, rng, n=state.config.n_candidates
            )
            for k in range(state.spec.execute):
                a = chosen.executed[k * state.spec.action_dim : (k + 1) * state.spec.action_dim]
                obs, r, done = env.step(a)
                if done:
                    break
        wins += int(r > 0)
        steps.append(env.steps_taken)
    return EvalResult(
        successes=wins,
        episodes=episodes,
        mean_episode_time=float(np.mean(steps)) * env.spec.dt,
        mean_steps=float(np.mean(steps)),
    )


def evaluate_flow_only(flow: FlowPolicy, env, episodes: int = 30, seed: int = 0) -> EvalResult:
    """Base-policy rollouts (one stochastic sample per replan, no critic)."""
    from .policies import sample_base_chunks

    wins = 0
    steps = []
    spec = flow.spec
    for ep in range(episodes):
        obs = env.reset(seed=derive_seed(seed, "sft-eval-reset", ep))
        rng = substream(seed, "sft-eval-sample", ep)
        done, r = False, 0.0
        while not done:
            chunk = sample_base_chunks(flow, obs, 1, rng)[0]
            for k in range(spec.execute):
                a = chunk[k * spec.action_dim : (k + 1) * spec.action_dim]
                obs, r, done = env.step(a)
                if done:
                    break
        wins += int(r > 0)
        steps.append(env.steps_taken)
    return EvalResult(wins, episodes, float(np.mean(steps)) * env.spec.dt, float(np.mean(steps)))


@dataclass
class SftResult:
    flow: FlowPolicy
    success_rate: float
    steps_used: int
    warning: bool  # budget exhausted before reaching the threshold


def sft_pretrain(
    flow: FlowPolicy,
    demos: list[Trajectory],
    eval_env,
    threshold: float = 0.4,
    budget: int = 4000,
    batch_size: int = 64,
    lr: float = 3e-4,
    eval_every: int = 250,
    eval_episodes: int = 30,
    seed: int = 0,
) -> SftResult:
    """Imitation-pretrain the flow until base sampling clears the success
    threshold on a 30-episode evaluation, or the step budget runs out
    (then the best checkpoint comes back with a warning flag)."""
    if not demos:
        raise ValueError("sft_pretrain needs at least one demo trajectory")
    spec = flow.spec
    pairs_s, pairs_a = [], []
    for traj in demos:
        for tr in slice_trajectory(traj, spec):
            pairs_s.append(tr.obs)
            pairs_a.append(tr.chunk)
    ds_s = np.stack(pairs_s)
    ds_a = np.stack(pairs_a)
    rng = substream(seed, "sft")

    best = ([a.copy() for a in nn.mlp_arrays(flow.net)], -1.0)
    opt = nn.adam_init(nn.mlp_arrays(flow.net))
    steps_used = 0

    def evaluate_now() -> float:
        res = evaluate_flow_only(flow, eval_env, episodes=eval_episodes, seed=derive_seed(seed, "sft-eval", steps_used))
        return res.rate

    rate = evaluate_now()
    if rate > best[1]:
        best = ([a.copy() for a in nn.mlp_arrays(flow.net)], rate)
    if rate >= threshold or budget <= 0:
        return SftResult(flow=flow, success_rate=rate, steps_used=0, warning=budget <= 0 and rate < threshold)

    while steps_used < budget:
        n = min(eval_every, budget - steps_used)
        for _ in range(n):
            idx = rng.integers(0, len(ds_s), size=min(batch_size, len(ds_s)))
            s, a = ds_s[idx], ds_a[idx]
            z0 = rng.standard_normal(a.shape)
            tau = rng.uniform(0, 1, a.shape[0])
            traced, leaves = nn.trace_mlp(flow.net)
            loss = cfm_loss(traced, s, a, z0, tau)
            grads = nn.collect_grads(ag.backward(loss), leaves)
            arrays, opt = nn.adam_step(opt, nn.mlp_arrays(flow.net), grads, lr)
            flow.net = nn.mlp_from_arrays(flow.net, arrays)
        steps_used += n
        rate = evaluate_now()
        if rate > best[1]:
            best = ([a.copy() for a in nn.mlp_arrays(flow.net)], rate)
        if rate >= threshold:
            flow = flow.update_target(1.0)
            return SftResult(flow=flow, success_rate=rate, steps_used=steps_used, warning=False)

    flow.net = nn.mlp_from_arrays(flow.net, best[0])
    flow = flow.update_target(1.0)
    return SftResult(flow=flow, success_rate=best[1], steps_used=steps_used, warning=True)
