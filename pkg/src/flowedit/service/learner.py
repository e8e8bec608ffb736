"""Learner: owns training state, inference, and the replay buffer.

The core is transport-free; a threaded TCP server wraps it in the wire
protocol.  All mutation is serialized through one lock, train work is
accounted through an owed-steps counter (drained inline in sync mode, by a
trainer thread in async mode), and parameter snapshots are published with
a monotonically increasing policy version.
"""

from __future__ import annotations

import json
import socket
import socketserver
import threading
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import nn
from ..agent import AgentConfig, AgentState, TrainStats, UpdateScheduler, select_chunk, train_step
from ..baselines import DsrlState, RlpdState, dsrl_update, hgdagger_update, rlpd_update
from ..checkpoint import load_arrays, load_manifest, save_arrays, save_manifest
from ..policies import FlowPolicy, sample_base_chunks
from ..replay import ChunkTransition, ReplayBuffer, load_buffer, save_buffer
from ..rng import substream
from . import protocol
from .protocol import (
    ChunkReply,
    ErrorFrame,
    GetChunk,
    Heartbeat,
    InterventionNotice,
    ProtocolError,
    PushTransition,
    StatsPush,
)

ALGOS = ("exft", "hgdagger", "rlpd", "dsrl", "sft")


class LearnerCore:
    """Training + inference + replay behind plain method calls."""

    def __init__(
        self,
        config: AgentConfig,
        obs_dim: int,
        seed: int,
        algo: str = "exft",
        metrics=None,
        checkpoint_dir: str | None = None,
        checkpoint_every: int = 500,
        flow_init: FlowPolicy | None = None,
    ):
        if algo not in ALGOS:
            raise ValueError(f"algo must be one of {ALGOS}")
        self.config = config
        self.algo = algo
        self.obs_dim = obs_dim
        self.seed = seed
        self.metrics = metrics or (lambda record: None)
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.checkpoint_every = checkpoint_every
        self.lock = threading.RLock()

        self.state = AgentState.init(config, obs_dim, seed)
        if flow_init is not None:
            self.state = replace(self.state, flow=flow_init)
        self.rlpd: RlpdState | None = None
        self.dsrl: DsrlState | None = None
        if algo == "rlpd":
            self.rlpd = RlpdState.init(lambda name: substream(seed, name), self.state.spec, obs_dim, config)
        elif algo == "dsrl":
            self.dsrl = DsrlState.init(lambda name: substream(seed, name), self.state.flow, obs_dim, config)
        self.opt_hg = nn.adam_init(nn.mlp_arrays(self.state.flow.net))

        self.replay = ReplayBuffer(spec=self.state.spec, capacity=config.replay_capacity)
        self.scheduler = UpdateScheduler(config)
        self.rng_train = substream(seed, "learner-train")
        self.rng_select = substream(seed, "learner-select")
        self.policy_version = 0
        self.env_steps = 0
        self.episodes = 0
        self.owed_steps = 0
        self.sync_drain = True  # async mode hands owed steps to a trainer thread
        self._since_checkpoint = 0

    # --- inference -----------------------------------------------------------

    def get_chunk(self, obs: np.ndarray) -> tuple[np.ndarray, int]:
        """Behavior chunk for an observation; returns (chunk H*A, version)."""
        with self.lock:
            if self.algo == "exft":
                chosen, _ = select_chunk(
                    self.state.flow,
                    self.state.edit,
                    self.state.critic,
                    obs,
                    self.rng_select,
                    n=self.config.n_candidates,
                )
                return chosen.chunk, self.policy_version
            if self.algo in ("hgdagger", "sft"):
                chunk = sample_base_chunks(self.state.flow, obs, 1, self.rng_select)[0]
                return chunk, self.policy_version
            if self.algo == "rlpd":
                a = self.rlpd.policy.sample(obs, self.rng_select)[0]
                return a, self.policy_version
            a = self.dsrl.act(obs, self.rng_select)[0]
            return a, self.policy_version

    # --- data path -------------------------------------------------------------

    def push_transition(self, t: ChunkTransition) -> None:
        with self.lock:
            self.replay.insert(t)
            self.env_steps += t.n_steps
            for _ in range(t.n_steps):
                self.owed_steps += self.scheduler.on_env_step()
            if t.done:
                self.episodes += 1
                self.owed_steps += self.scheduler.on_episode_end()

    def drain_owed(self, limit: int | None = None) -> int:
        """Run owed train steps (all of them in sync mode)."""
        done = 0
        while True:
            with self.lock:
                if self.owed_steps <= 0 or (limit is not None and done >= limit):
                    return done
                self.owed_steps -= 1
                self._train_once()
                done += 1

    def _train_once(self) -> None:
        if self.algo == "sft":
            return
        stats = None
        if self.algo == "exft":
            self.state, st = train_step(self.state, self.replay, self.rng_train)
            if not st.skipped:
                stats = st.record()
        elif self.algo == "hgdagger":
            flow, self.opt_hg, n = hgdagger_update(
                self.state.flow, self.opt_hg, self.replay, self.rng_train, self.config.batch_size, self.config.lr
            )
            if n:
                self.state = replace(self.state, flow=flow, train_steps=self.state.train_steps + 1)
                stats = {"step": self.state.train_steps, "critic_loss": 0.0, "edit_loss": 0.0, "cfm_loss": 0.0, "alpha": 0.0, "q_mean": 0.0}
        elif self.algo == "rlpd":
            if len(self.replay) >= self.config.batch_size:
                self.rlpd, st = rlpd_update(
                    self.rlpd, self.replay, self.rng_train, self.config.batch_size, self.config.lr, self.config.execute
                )
                self.state = replace(self.state, train_steps=self.state.train_steps + 1)
                stats = {"step": self.state.train_steps, "critic_loss": st["critic_loss"], "edit_loss": st["pi_loss"], "cfm_loss": 0.0, "alpha": st["alpha"], "q_mean": 0.0}
        elif self.algo == "dsrl":
            if len(self.replay) >= self.config.batch_size:
                self.dsrl, st = dsrl_update(
                    self.dsrl, self.replay, self.rng_train, self.config.batch_size, self.config.lr
                )
                self.state = replace(self.state, train_steps=self.state.train_steps + 1)
                stats = {"step": self.state.train_steps, "critic_loss": st["critic_loss"], "edit_loss": st["pi_loss"], "cfm_loss": 0.0, "alpha": st["alpha"], "q_mean": 0.0}
        if stats is not None:
            self.policy_version += 1
            self.metrics(stats)
            self._since_checkpoint += 1
            if self.checkpoint_dir and self._since_checkpoint >= self.checkpoint_every:
                self.save_checkpoint()
                self._since_checkpoint = 0

    def latest_stats_msg(self) -> StatsPush | None:
        return None

    # --- persistence --------------------------------------------------------------

    def save_checkpoint(self, path: str | Path | None = None) -> Path:
        base = Path(path) if path else self.checkpoint_dir
        base.mkdir(parents=True, exist_ok=True)
        with self.lock:
            save_arrays(base / "flow.cfk", nn.mlp_arrays(self.state.flow.net))
            save_arrays(base / "flow_target.cfk", nn.mlp_arrays(self.state.flow.target_net))
            save_arrays(base / "edit.cfk", nn.mlp_arrays(self.state.edit.net))
            for i, (net, tgt) in enumerate(zip(self.state.critic.nets, self.state.critic.target_nets)):
                save_arrays(base / f"critic_{i}.cfk", nn.mlp_arrays(net))
                save_arrays(base / f"critic_target_{i}.cfk", nn.mlp_arrays(tgt))
            save_arrays(base / "temperature.cfk", [self.state.temperature.log_alpha])
            save_buffer(base / "replay.cfrb", self.replay)
            spec = self.state.spec
            save_manifest(
                base / "manifest.json",
                {
                    "algo": self.algo,
                    "policy": {
                        "horizon": spec.horizon,
                        "execute": spec.execute,
                        "action_dim": spec.action_dim,
                        "beta": self.config.edit_scale,
                        "euler_steps": self.config.euler_steps,
                    },
                    "critic": {
                        "ensemble_size": self.config.ensemble_size,
                        "subsample": self.config.target_subsample,
                        "gamma": self.config.gamma,
                        "tau_q": self.config.tau_q,
                    },
                    "policy_version": self.policy_version,
                    "train_steps": self.state.train_steps,
                    "env_steps": self.env_steps,
                    "episodes": self.episodes,
                },
            )
        return base

    def restore_checkpoint(self, path: str | Path) -> None:
        base = Path(path)
        manifest = load_manifest(base / "manifest.json")
        with self.lock:
            flow_net = nn.mlp_from_arrays(self.state.flow.net, load_arrays(base / "flow.cfk"))
            flow_tgt = nn.mlp_from_arrays(self.state.flow.net, load_arrays(base / "flow_target.cfk"))
            flow = replace(self.state.flow, net=flow_net, target_net=flow_tgt)
            edit_net = nn.mlp_from_arrays(self.state.edit.net, load_arrays(base / "edit.cfk"))
            nets, tgts = [], []
            for i, net in enumerate(self.state.critic.nets):
                nets.append(nn.mlp_from_arrays(net, load_arrays(base / f"critic_{i}.cfk")))
                tgts.append(nn.mlp_from_arrays(net, load_arrays(base / f"critic_target_{i}.cfk")))
            (log_alpha,) = load_arrays(base / "temperature.cfk")
            self.state = replace(
                self.state,
                flow=flow,
                edit=replace(self.state.edit, net=edit_net),
                critic=replace(self.state.critic, nets=nets, target_nets=tgts),
                temperature=replace(self.state.temperature, log_alpha=log_alpha),
                train_steps=int(manifest["train_steps"]),
            )
            self.replay = load_buffer(base / "replay.cfrb", self.state.spec, self.config.replay_capacity)
            self.policy_version = int(manifest["policy_version"])
            self.env_steps = int(manifest["env_steps"])
            self.episodes = int(manifest["episodes"])

    # --- message dispatch ------------------------------------------------------------

    def handle(self, msg):
        """Wire-level dispatch; returns the reply message (or None)."""
        if isinstance(msg, GetChunk):
            chunk, version = self.get_chunk(msg.obs)
            return ChunkReply(chunk=chunk, policy_version=version)
        if isinstance(msg, PushTransition):
            self.push_transition(msg.transition)
            if self.sync_drain:
                self.drain_owed()
            return Heartbeat()
        if isinstance(msg, InterventionNotice):
            return Heartbeat()
        if isinstance(msg, Heartbeat):
            return Heartbeat()
        return ErrorFrame(code=protocol.ERR_TYPE, detail=f"unexpected {type(msg).__name__}")


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        core: LearnerCore = self.server.core  # type: ignore[attr-defined]
        buf = b""
        while True:
            try:
                data = self.request.recv(65536)
            except (ConnectionResetError, OSError):
                return
            if not data:
                return
            buf += data
            while True:
                try:
                    msg, used = protocol.decode(buf)
                except ProtocolError as e:
                    if e.code == protocol.ERR_TRUNCATED:
                        break  # wait for more bytes
                    self.request.sendall(protocol.encode(ErrorFrame(code=e.code, detail=str(e))))
                    return
                buf = buf[used:]
                reply = core.handle(msg)
                if reply is not None:
                    self.request.sendall(protocol.encode(reply))


class LearnerServer:
    """Threaded TCP front-end for a LearnerCore."""

    def __init__(self, core: LearnerCore, host: str = "127.0.0.1", port: int = 0):
        self.core = core
        self._server = socketserver.ThreadingTCPServer((host, port), _Handler, bind_and_activate=False)
        self._server.allow_reuse_address = True
        self._server.daemon_threads = True
        self._server.server_bind()
        self._server.server_activate()
        self._server.core = core  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address  # type: ignore[return-value]

    def start(self) -> "LearnerServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread:
            self._thread.join(timeout=5)


class SocketTransport:
    """Framed request/response client used by the actor."""

    def __init__(self, host: str, port: int, retries: int = 10, retry_wait: float = 0.2):
        self.host, self.port = host, port
        self.retries = retries
        self.retry_wait = retry_wait
        self._sock: socket.socket | None = None
        self._buf = b""

    def connect(self) -> None:
        import time

        last = None
        for _ in range(self.retries):
            try:
                self._sock = socket.create_connection((self.host, self.port), timeout=30)
                return
            except OSError as e:
                last = e
                time.sleep(self.retry_wait)
        raise ConnectionError(f"learner unreachable at {self.host}:{self.port}: {last}")

    def request(self, msg):
        if self._sock is None:
            self.connect()
        self._sock.sendall(protocol.encode(msg))
        while True:
            try:
                reply, used = protocol.decode(self._buf)
                self._buf = self._buf[used:]
                return reply
            except ProtocolError as e:
                if e.code != protocol.ERR_TRUNCATED:
                    raise
            data = self._sock.recv(65536)
            if not data:
                raise ConnectionError("learner closed the connection")
            self._buf += data

    def get_chunk(self, obs: np.ndarray) -> tuple[np.ndarray, int]:
        reply = self.request(GetChunk(obs=np.asarray(obs, float)))
        if not isinstance(reply, ChunkReply):
            raise ProtocolError(protocol.ERR_TYPE, f"expected ChunkReply, got {type(reply).__name__}")
        return reply.chunk, reply.policy_version

    def push_transition(self, t: ChunkTransition) -> None:
        self.request(PushTransition(transition=t))

    def notify_intervention(self, overrides) -> None:
        self.request(InterventionNotice(overrides=overrides))

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
            self._sock = None


class LocalTransport:
    """Direct in-process calls; the sync-mode fast path."""

    def __init__(self, core: LearnerCore, drain: bool = True):
        self.core = core
        self.drain = drain

    def get_chunk(self, obs: np.ndarray) -> tuple[np.ndarray, int]:
        return self.core.get_chunk(obs)

    def push_transition(self, t: ChunkTransition) -> None:
        self.core.push_transition(t)
        if self.drain:
            self.core.drain_owed()

    def notify_intervention(self, overrides) -> None:
        pass

    def close(self) -> None:
        pass
