"""Session orchestration: configs, run directories, the sync/async modes,
demo collection, SFT, training runs, and evaluation.

Sync mode interleaves actor steps and train steps in one logical thread of
control and is bit-reproducible.  Async mode runs the trainer in its own
thread; replay access and snapshot publication stay serialized inside the
learner core.
"""

from __future__ import annotations

import dataclasses
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..agent import AgentConfig, AgentState, evaluate, evaluate_flow_only, sft_pretrain
from ..envs import make_env
from ..policies import FlowPolicy
from ..replay import (
    RECORD_TRAJECTORY,
    ReplayBuffer,
    Trajectory,
    load_demos,
    write_container,
)
from ..rng import derive_seed, substream
from .actor import Actor, NoIntervention, QueueIntervention, ScriptedIntervention
from .learner import ALGOS, LearnerCore, LearnerServer, LocalTransport, SocketTransport
from .plots import emit_plots

MODES = ("sync", "async")


@dataclass
class SessionConfig:
    task: str = "pointinsert"
    algo: str = "exft"
    mode: str = "sync"
    seed: int = 0
    steps: int = 20_000              # environment-step budget
    demos: str | None = None         # demo container path
    run_dir: str = "runs/session"
    ui_port: int | None = None
    host: str = "127.0.0.1"
    port: int = 0                    # 0 = ephemeral (socket transport only)
    transport: str = "local"         # local | socket
    eval_every_episodes: int = 25
    eval_episodes: int = 30
    stop_at_successes: int | None = None  # early stop when eval reaches this
    stop_intervention_rate: float | None = None  # ... and recent rate is below this
    intervention: str = "scripted"   # scripted | none | ui
    deviation_threshold: float = 0.6
    disengage_success_rate: float = 0.9
    sft_budget: int = 4000
    sft_eval_every: int = 200
    checkpoint_every: int = 500
    env_overrides: dict = field(default_factory=dict)
    agent: AgentConfig = field(default_factory=AgentConfig)

    def validate(self) -> "SessionConfig":
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}")
        self.agent.task = self.task
        self.agent.validate()
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @staticmethod
    def from_dict(d: dict) -> "SessionConfig":
        d = dict(d)
        agent = d.pop("agent", {})
        if isinstance(agent, dict):
            known = {f.name for f in dataclasses.fields(AgentConfig)}
            bad = set(agent) - known
            if bad:
                raise KeyError(f"unknown agent config keys: {sorted(bad)}")
            agent = AgentConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in agent.items()})
        known = {f.name for f in dataclasses.fields(SessionConfig)}
        bad = set(d) - known
        if bad:
            raise KeyError(f"unknown session config keys: {sorted(bad)}")
        return SessionConfig(agent=agent, **d)

    @staticmethod
    def from_yaml(path: str | Path) -> "SessionConfig":
        return SessionConfig.from_dict(yaml.safe_load(Path(path).read_text()) or {})


class MetricsWriter:
    def __init__(self, path: Path):
        self.path = path
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "w")

    def __call__(self, record: dict) -> None:
        self._fh.write(json.dumps(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def prepare_run_dir(cfg: SessionConfig) -> Path:
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return run_dir


def collect_demos(cfg: SessionConfig, episodes: int, out_path: str | Path, jitter: float = 0.05) -> dict:
    """Run the scripted expert and store raw trajectories.

    Small action jitter stands in for teleoperation noise; the expert's
    next-step corrections put its feedback behavior into the data, which
    cloning needs to see.
    """
    env = make_env(cfg.task, cfg.env_overrides)
    trajs = []
    wins = 0
    for ep in range(episodes):
        obs = env.reset(seed=derive_seed(cfg.seed, "demo", ep))
        rng = substream(cfg.seed, "demo-jitter", ep)
        observations = [obs]
        actions = []
        rewards = []
        done, r = False, 0.0
        while not done:
            a = env.expert_action()
            if jitter > 0:
                a = np.clip(a + rng.normal(0.0, jitter, a.shape), -1.0, 1.0)
            obs, r, done = env.step(a)
            observations.append(obs)
            actions.append(a)
            rewards.append(r)
        if r > 0:  # keep successful demonstrations only
            trajs.append(
                Trajectory(
                    observations=np.stack(observations),
                    actions=np.stack(actions),
                    rewards=np.asarray(rewards, float),
                )
            )
            wins += 1
    write_container(out_path, ((RECORD_TRAJECTORY, t) for t in trajs))
    return {"episodes": episodes, "kept": wins, "path": str(out_path)}


def load_demo_trajectories(path: str | Path) -> list[Trajectory]:
    from ..replay import RECORD_TRAJECTORY as RT, read_container

    return [rec for kind, rec in read_container(path) if kind == RT]


def run_sft(cfg: SessionConfig, out_dir: str | Path | None = None) -> dict:
    """Imitation-pretrain the base flow to the bootstrap threshold."""
    cfg.validate()
    if not cfg.demos:
        raise ValueError("sft needs --demos")
    run_dir = Path(out_dir) if out_dir else prepare_run_dir(cfg)
    env = make_env(cfg.task, cfg.env_overrides)
    state = AgentState.init(cfg.agent, env.spec.obs_dim, cfg.seed, action_dim=env.spec.action_dim)
    demos = load_demo_trajectories(cfg.demos)
    result = sft_pretrain(
        state.flow,
        demos,
        env,
        threshold=cfg.agent.sft_threshold,
        budget=cfg.sft_budget,
        batch_size=cfg.agent.batch_size,
        lr=cfg.agent.lr,
        eval_every=cfg.sft_eval_every,
        eval_episodes=cfg.eval_episodes,
        seed=cfg.seed,
    )
    from .. import nn
    from ..checkpoint import save_arrays, save_manifest

    run_dir.mkdir(parents=True, exist_ok=True)
    save_arrays(run_dir / "sft_flow.cfk", nn.mlp_arrays(result.flow.net))
    save_manifest(
        run_dir / "sft_manifest.json",
        {
            "task": cfg.task,
            "success_rate": result.success_rate,
            "steps_used": result.steps_used,
            "warning": result.warning,
            "policy": {
                "horizon": cfg.agent.horizon,
                "execute": cfg.agent.execute,
                "action_dim": env.spec.action_dim,
                "beta": cfg.agent.edit_scale,
                "euler_steps": cfg.agent.euler_steps,
            },
        },
    )
    return {
        "success_rate": result.success_rate,
        "steps_used": result.steps_used,
        "warning": result.warning,
        "checkpoint": str(run_dir / "sft_flow.cfk"),
    }


def load_sft_flow(cfg: SessionConfig, env, path: str | Path) -> FlowPolicy:
    from .. import nn
    from ..checkpoint import load_arrays

    state = AgentState.init(cfg.agent, env.spec.obs_dim, cfg.seed, action_dim=env.spec.action_dim)
    arrays = load_arrays(path)
    net = nn.mlp_from_arrays(state.flow.net, arrays)
    target = nn.mlp_from_arrays(state.flow.net, [a.copy() for a in arrays])
    return dataclasses.replace(state.flow, net=net, target_net=target)


@dataclass
class RunResult:
    run_dir: str
    env_steps: int
    episodes: int
    train_steps: int
    final_eval_successes: int
    final_eval_episodes: int
    final_mean_episode_time: float
    final_intervention_rate: float
    stopped_early: bool


def _make_intervention(cfg: SessionConfig, ui_bus=None):
    if cfg.intervention == "scripted":
        return ScriptedIntervention(
            deviation_threshold=cfg.deviation_threshold,
            disengage_success_rate=cfg.disengage_success_rate,
        )
    if cfg.intervention == "ui" and ui_bus is not None:
        return QueueIntervention(ui_bus)
    return NoIntervention()


def run_train(cfg: SessionConfig, sft_checkpoint: str | None = None, ui_bus=None) -> RunResult:
    """Online training with the learner/actor split.

    Early-stops once a periodic 30-episode evaluation reaches
    cfg.stop_at_successes.
    """
    cfg.validate()
    run_dir = prepare_run_dir(cfg)
    env = make_env(cfg.task, cfg.env_overrides)
    eval_env = make_env(cfg.task, cfg.env_overrides)
    metrics = MetricsWriter(run_dir / "metrics.jsonl")

    flow_init = load_sft_flow(cfg, env, sft_checkpoint) if sft_checkpoint else None
    core = LearnerCore(
        cfg.agent,
        env.spec.obs_dim,
        cfg.seed,
        algo=cfg.algo,
        metrics=metrics,
        checkpoint_dir=str(run_dir / "checkpoint"),
        checkpoint_every=cfg.checkpoint_every,
        flow_init=flow_init,
    )
    if cfg.demos:
        load_demos(core.replay, cfg.demos)

    core.sync_drain = cfg.mode == "sync"
    server = None
    if cfg.transport == "socket":
        server = LearnerServer(core, host=cfg.host, port=cfg.port).start()
        transport = SocketTransport(*server.address)
        transport.connect()
    else:
        transport = LocalTransport(core, drain=cfg.mode == "sync")

    stop_flag = threading.Event()
    trainer_thread = None
    if cfg.mode == "async":
        # The trainer thread owns the owed-step budget.
        def trainer_loop():
            while not stop_flag.is_set():
                if core.drain_owed(limit=8) == 0:
                    stop_flag.wait(0.002)

        trainer_thread = threading.Thread(target=trainer_loop, daemon=True)
        trainer_thread.start()

    ui_hook = None
    if ui_bus is not None:
        def ui_hook(env_, episode, step, k, c, reward, version, intervening):
            ui_bus.publish_frame(env_, episode, step, k, c, reward, version, intervening)

    actor = Actor(
        env,
        transport,
        execute=cfg.agent.execute,
        intervention=_make_intervention(cfg, ui_bus),
        ui_hook=ui_hook,
        seed=cfg.seed,
    )

    stopped_early = False
    last_eval = (0, cfg.eval_episodes)
    recent_rates = []
    while actor.total_env_steps < cfg.steps:
        record = actor.run_episode()
        metrics(record.record(env.spec.dt))
        recent_rates.append(record.intervention_rate)
        if cfg.mode == "async":
            # let the trainer catch up with owed work between episodes
            while core.owed_steps > 0:
                stop_flag.wait(0.002)
        if cfg.stop_at_successes is not None and actor.episodes_done % cfg.eval_every_episodes == 0:
            res = evaluate(core.state, eval_env, episodes=cfg.eval_episodes, seed=cfg.seed)
            metrics(
                {
                    "eval_at_env_step": actor.total_env_steps,
                    "eval_successes": res.successes,
                    "eval_episodes": res.episodes,
                    "eval_mean_time_s": res.mean_episode_time,
                }
            )
            rate_ok = (
                cfg.stop_intervention_rate is None
                or float(np.mean(recent_rates[-20:])) <= cfg.stop_intervention_rate
            )
            if res.successes >= cfg.stop_at_successes and rate_ok:
                stopped_early = True
                break

    if trainer_thread is not None:
        stop_flag.set()
        trainer_thread.join(timeout=10)
    core.drain_owed()

    final = _final_eval(cfg, core, eval_env)
    metrics(
        {
            "eval_at_env_step": actor.total_env_steps,
            "eval_successes": final.successes,
            "eval_episodes": final.episodes,
            "eval_mean_time_s": final.mean_episode_time,
            "final": True,
        }
    )
    core.save_checkpoint()
    metrics.close()
    if server is not None:
        transport.close()
        server.stop()
    emit_plots(run_dir / "metrics.jsonl", run_dir / "plots")
    tail = recent_rates[-20:] or [0.0]
    return RunResult(
        run_dir=str(run_dir),
        env_steps=actor.total_env_steps,
        episodes=actor.episodes_done,
        train_steps=core.state.train_steps,
        final_eval_successes=final.successes,
        final_eval_episodes=final.episodes,
        final_mean_episode_time=final.mean_episode_time,
        final_intervention_rate=float(np.mean(tail)),
        stopped_early=stopped_early,
    )


def _final_eval(cfg: SessionConfig, core: LearnerCore, eval_env):
    if cfg.algo == "exft":
        return evaluate(core.state, eval_env, episodes=cfg.eval_episodes, seed=cfg.seed)
    if cfg.algo in ("hgdagger", "sft"):
        return evaluate_flow_only(core.state.flow, eval_env, episodes=cfg.eval_episodes, seed=cfg.seed)
    return _eval_baseline(cfg, core, eval_env)


def _eval_baseline(cfg: SessionConfig, core: LearnerCore, env):
    from ..agent import EvalResult

    wins = 0
    steps = []
    for ep in range(cfg.eval_episodes):
        obs = env.reset(seed=derive_seed(cfg.seed, "eval-reset", ep))
        rng = substream(cfg.seed, "eval-baseline", ep)
        done, r = False, 0.0
        a_dim = env.spec.action_dim
        while not done:
            if cfg.algo == "rlpd":
                chunk = core.rlpd.policy.sample(obs, rng)[0]
            else:
                chunk = core.dsrl.act(obs, rng)[0]
            for k in range(cfg.agent.execute):
                a = chunk[k * a_dim : (k + 1) * a_dim]
                obs, r, done = env.step(a)
                if done:
                    break
        wins += int(r > 0)
        steps.append(env.steps_taken)
    return EvalResult(wins, cfg.eval_episodes, float(np.mean(steps)) * env.spec.dt, float(np.mean(steps)))


def run_eval(cfg: SessionConfig, checkpoint_dir: str | Path | None = None) -> dict:
    cfg.validate()
    env = make_env(cfg.task, cfg.env_overrides)
    core = LearnerCore(cfg.agent, env.spec.obs_dim, cfg.seed, algo=cfg.algo)
    if checkpoint_dir:
        core.restore_checkpoint(checkpoint_dir)
    res = _final_eval(cfg, core, env)
    return {
        "successes": res.successes,
        "episodes": res.episodes,
        "mean_episode_time_s": res.mean_episode_time,
    }
