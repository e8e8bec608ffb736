"""Chunk-transition replay: storage, demo loading, uniform sampling, and
the mid-chunk intervention merge.

Files use a versioned binary container (magic "CFRB1", little-endian,
per-record length prefix) holding either sliced transitions or raw demo
trajectories; see docs/formats.md.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .policies import ChunkSpec

CONTAINER_MAGIC = b"CFRB1"
RECORD_TRANSITION = 0
RECORD_TRAJECTORY = 1

SOURCES = ("autonomous", "intervention", "demo")


class ReplayError(ValueError):
    pass


@dataclass
class ChunkTransition:
    obs: np.ndarray            # (obs_dim,)
    chunk: np.ndarray          # (C*A,) merged actions as sent to the env
    rewards: np.ndarray        # (n_steps,) with n_steps <= C; absent past done
    next_obs: np.ndarray
    done: bool
    mask: np.ndarray           # (C,) bool; True where a human action overwrote
    source: str = "autonomous"
    truncated: bool = False    # padded demo tail; excluded from bootstrap

    def validate(self, spec: ChunkSpec | None = None) -> "ChunkTransition":
        if self.source not in SOURCES:
            raise ReplayError(f"unknown source {self.source!r}")
        n = len(self.rewards)
        if n < 1 or n > len(self.mask):
            raise ReplayError(f"rewards length {n} out of range for mask {len(self.mask)}")
        for name, arr in (("obs", self.obs), ("chunk", self.chunk), ("next_obs", self.next_obs)):
            if not np.all(np.isfinite(arr)):
                raise ReplayError(f"non-finite {name}")
        if spec is not None:
            if self.chunk.shape != (spec.executed_dim,):
                raise ReplayError(
                    f"chunk shape {self.chunk.shape} != ({spec.executed_dim},)"
                )
            if self.mask.shape != (spec.execute,):
                raise ReplayError(f"mask shape {self.mask.shape} != ({spec.execute},)")
        return self

    def reward_agg(self, gamma: float) -> float:
        k = np.arange(len(self.rewards), dtype=float)
        return float(np.sum(np.power(gamma, k) * self.rewards))

    @property
    def n_steps(self) -> int:
        return len(self.rewards)

    def intervention_fraction(self) -> float:
        n = self.n_steps
        return float(np.sum(self.mask[:n])) / n


@dataclass
class Trajectory:
    """Raw demo episode: T+1 observations, T actions, T rewards."""

    observations: np.ndarray  # (T+1, obs_dim)
    actions: np.ndarray       # (T, A)
    rewards: np.ndarray       # (T,)

    def __len__(self) -> int:
        return len(self.actions)


def merge_intervention(policy_chunk: np.ndarray, overrides, action_dim: int, execute: int):
    """Overlay corrective actions onto a planned chunk.

    `overrides` is a list of (step, action) with step in [0, execute);
    the rest of the chunk is kept bit-identical.  Returns (merged chunk,
    mask over the executed window).
    """
    chunk = np.array(policy_chunk, dtype=float, copy=True)
    if chunk.ndim != 1 or chunk.size % action_dim:
        raise ReplayError("policy chunk must be flat with a whole number of actions")
    mask = np.zeros(execute, dtype=bool)
    for step, action in overrides:
        if not 0 <= step < execute:
            raise ReplayError(f"override step {step} outside executed window [0, {execute})")
        action = np.asarray(action, dtype=float)
        if action.shape != (action_dim,):
            raise ReplayError(f"override action shape {action.shape} != ({action_dim},)")
        chunk[step * action_dim : (step + 1) * action_dim] = action
        mask[step] = True
    return chunk, mask


@dataclass
class ReplayBuffer:
    spec: ChunkSpec
    capacity: int = 1_000_000
    _items: list = field(default_factory=list)
    _next_slot: int = 0
    inserted: int = 0

    def __len__(self) -> int:
        return len(self._items)

    def insert(self, transition: ChunkTransition) -> None:
        transition.validate(self.spec)
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next_slot] = transition
            self._next_slot = (self._next_slot + 1) % self.capacity
        self.inserted += 1

    def sample_batch(self, batch_size: int, rng: np.random.Generator) -> list[ChunkTransition]:
        """Uniform i.i.d. with replacement; errors only on an empty buffer."""
        if not self._items:
            raise ReplayError("insufficient data: buffer is empty")
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]

    def iter_all(self):
        return iter(self._items)

    def count_source(self, *sources: str) -> int:
        return sum(1 for t in self._items if t.source in sources)

    def sample_split(self, batch_size: int, rng: np.random.Generator, demo_fraction: float = 0.5) -> list[ChunkTransition]:
        """Symmetric demo/online sampling (the from-scratch baseline's diet)."""
        demos = [t for t in self._items if t.source == "demo"]
        online = [t for t in self._items if t.source != "demo"]
        if not demos or not online:
            return self.sample_batch(batch_size, rng)
        n_demo = int(round(batch_size * demo_fraction))
        picks = [demos[i] for i in rng.integers(0, len(demos), size=n_demo)]
        picks += [online[i] for i in rng.integers(0, len(online), size=batch_size - n_demo)]
        return picks


def slice_trajectory(traj: Trajectory, spec: ChunkSpec, source: str = "demo") -> list[ChunkTransition]:
    """Cut a trajectory into C-step transitions.

    A trailing partial window is padded by repeating the final action and
    flagged truncated so TD learning skips its bootstrap.
    """
    c, a = spec.execute, spec.action_dim
    if traj.actions.shape[1] != a:
        raise ReplayError(f"trajectory action dim {traj.actions.shape[1]} != {a}")
    out = []
    t = 0
    total = len(traj)
    while t < total:
        end = min(t + c, total)
        n = end - t
        actions = traj.actions[t:end]
        truncated = n < c
        if truncated:
            pad = np.tile(traj.actions[end - 1], (c - n, 1))
            actions = np.concatenate([actions, pad], axis=0)
        done = end == total
        out.append(
            ChunkTransition(
                obs=traj.observations[t].copy(),
                chunk=actions.reshape(-1).copy(),
                rewards=traj.rewards[t:end].copy(),
                next_obs=traj.observations[end].copy(),
                done=done,
                mask=np.zeros(c, dtype=bool),
                source=source,
                truncated=truncated,
            )
        )
        t = end
    return out


def load_demos(buffer: ReplayBuffer, path: str | Path) -> int:
    """Load demo trajectories, slicing to the buffer's chunk spec."""
    count = 0
    for kind, record in read_container(path):
        if kind == RECORD_TRAJECTORY:
            for tr in slice_trajectory(record, buffer.spec):
                buffer.insert(tr)
                count += 1
        elif kind == RECORD_TRANSITION:
            record.source = "demo"
            buffer.insert(record)
            count += 1
    return count


# --- binary container -------------------------------------------------------

def _pack_vec(a: np.ndarray) -> bytes:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    return struct.pack("<I", a.size) + a.tobytes()


def _unpack_vec(blob: bytes, off: int) -> tuple[np.ndarray, int]:
    (n,) = struct.unpack_from("<I", blob, off)
    off += 4
    a = np.frombuffer(blob[off : off + 8 * n], dtype="<f8").copy()
    if a.size != n:
        raise ReplayError("truncated vector")
    return a, off + 8 * n


def encode_transition(t: ChunkTransition) -> bytes:
    mask_bytes = np.asarray(t.mask, dtype=np.uint8).tobytes()
    return b"".join(
        [
            _pack_vec(t.obs),
            _pack_vec(t.chunk),
            _pack_vec(t.rewards),
            _pack_vec(t.next_obs),
            struct.pack("<B", int(t.done)),
            struct.pack("<I", len(t.mask)),
            mask_bytes,
            struct.pack("<B", SOURCES.index(t.source)),
            struct.pack("<B", int(t.truncated)),
        ]
    )


def decode_transition(blob: bytes) -> ChunkTransition:
    off = 0
    obs, off = _unpack_vec(blob, off)
    chunk, off = _unpack_vec(blob, off)
    rewards, off = _unpack_vec(blob, off)
    next_obs, off = _unpack_vec(blob, off)
    if off + 1 > len(blob):
        raise ReplayError("truncated record")
    done = bool(blob[off])
    off += 1
    (mask_n,) = struct.unpack_from("<I", blob, off)
    off += 4
    mask = np.frombuffer(blob[off : off + mask_n], dtype=np.uint8).astype(bool)
    if mask.size != mask_n:
        raise ReplayError("truncated mask")
    off += mask_n
    if off + 2 > len(blob):
        raise ReplayError("truncated record tail")
    source_idx = blob[off]
    truncated = bool(blob[off + 1])
    off += 2
    if off != len(blob):
        raise ReplayError("trailing bytes in transition record")
    if source_idx >= len(SOURCES):
        raise ReplayError(f"bad source index {source_idx}")
    return ChunkTransition(
        obs=obs,
        chunk=chunk,
        rewards=rewards,
        next_obs=next_obs,
        done=done,
        mask=mask,
        source=SOURCES[source_idx],
        truncated=truncated,
    )


def encode_trajectory(traj: Trajectory) -> bytes:
    obs = np.asarray(traj.observations, dtype=np.float64)
    actions = np.asarray(traj.actions, dtype=np.float64)
    return b"".join(
        [
            struct.pack("<III", obs.shape[0], obs.shape[1], actions.shape[1]),
            obs.tobytes(),
            actions.tobytes(),
            np.asarray(traj.rewards, dtype=np.float64).tobytes(),
        ]
    )


def decode_trajectory(blob: bytes) -> Trajectory:
    n_obs, obs_dim, act_dim = struct.unpack_from("<III", blob, 0)
    off = 12
    t = n_obs - 1
    need = 8 * (n_obs * obs_dim + t * act_dim + t)
    if len(blob) - off != need:
        raise ReplayError("trajectory record size mismatch")
    obs = np.frombuffer(blob[off : off + 8 * n_obs * obs_dim], dtype="<f8").reshape(n_obs, obs_dim).copy()
    off += 8 * n_obs * obs_dim
    actions = np.frombuffer(blob[off : off + 8 * t * act_dim], dtype="<f8").reshape(t, act_dim).copy()
    off += 8 * t * act_dim
    rewards = np.frombuffer(blob[off : off + 8 * t], dtype="<f8").copy()
    return Trajectory(observations=obs, actions=actions, rewards=rewards)


def write_container(path: str | Path, records) -> int:
    """records: iterable of (kind, transition-or-trajectory)."""
    parts = [CONTAINER_MAGIC]
    n = 0
    for kind, record in records:
        payload = encode_transition(record) if kind == RECORD_TRANSITION else encode_trajectory(record)
        parts.append(struct.pack("<IB", len(payload) + 1, kind))
        parts.append(payload)
        n += 1
    Path(path).write_bytes(b"".join(parts))
    return n


def read_container(path: str | Path):
    blob = Path(path).read_bytes()
    if blob[: len(CONTAINER_MAGIC)] != CONTAINER_MAGIC:
        raise ReplayError(f"bad container magic {blob[:5]!r}")
    off = len(CONTAINER_MAGIC)
    while off < len(blob):
        if off + 5 > len(blob):
            raise ReplayError("truncated record header")
        (length, kind) = struct.unpack_from("<IB", blob, off)
        off += 5
        payload = blob[off : off + length - 1]
        if len(payload) != length - 1:
            raise ReplayError("truncated record payload")
        off += length - 1
        if kind == RECORD_TRANSITION:
            yield kind, decode_transition(payload)
        elif kind == RECORD_TRAJECTORY:
            yield kind, decode_trajectory(payload)
        else:
            raise ReplayError(f"unknown record kind {kind}")


def save_buffer(path: str | Path, buffer: ReplayBuffer) -> int:
    return write_container(path, ((RECORD_TRANSITION, t) for t in buffer.iter_all()))


def load_buffer(path: str | Path, spec: ChunkSpec, capacity: int = 1_000_000) -> ReplayBuffer:
    buf = ReplayBuffer(spec=spec, capacity=capacity)
    for kind, record in read_container(path):
        if kind != RECORD_TRANSITION:
            raise ReplayError("replay file holds non-transition records")
        buf.insert(record)
    return buf


def export_jsonl(path: str | Path, out_path: str | Path) -> int:
    """Human-inspectable dump of a replay/demo container."""
    n = 0
    with open(out_path, "w") as fh:
        for kind, record in read_container(path):
            if kind == RECORD_TRANSITION:
                row = {
                    "kind": "transition",
                    "obs": record.obs.tolist(),
                    "chunk": record.chunk.tolist(),
                    "rewards": record.rewards.tolist(),
                    "next_obs": record.next_obs.tolist(),
                    "done": record.done,
                    "mask": [bool(m) for m in record.mask],
                    "source": record.source,
                    "truncated": record.truncated,
                }
            else:
                row = {
                    "kind": "trajectory",
                    "length": len(record),
                    "observations": record.observations.tolist(),
                    "actions": record.actions.tolist(),
                    "rewards": record.rewards.tolist(),
                }
            fh.write(json.dumps(row) + "\n")
            n += 1
    return n
