"""Versioned wire protocol between actor, learner, and operator console.

Frame layout (little-endian): u32 length prefix counting everything after
itself, then u8 version, u8 message type, payload.  A Heartbeat is the
minimal 6-byte frame.  Numeric payload fields are float64; vectors carry a
u32 count.  The browser console speaks the same payloads as JSON over a
WebSocket; field names match the binary schema one for one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..replay import ChunkTransition, decode_transition, encode_transition

VERSION = 1

ERR_TRUNCATED = 1
ERR_VERSION = 2
ERR_TYPE = 3
ERR_PAYLOAD = 4

_ERROR_NAMES = {
    ERR_TRUNCATED: "truncated frame",
    ERR_VERSION: "bad version",
    ERR_TYPE: "bad message type",
    ERR_PAYLOAD: "bad payload",
}


class ProtocolError(ValueError):
    def __init__(self, code: int, detail: str = ""):
        self.code = code
        super().__init__(f"{_ERROR_NAMES.get(code, 'protocol error')}: {detail}")


def _pack_vec(a) -> bytes:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    return struct.pack("<I", a.size) + a.tobytes()


def _take(blob: bytes, off: int, n: int) -> bytes:
    if off + n > len(blob):
        raise ProtocolError(ERR_PAYLOAD, "short read")
    return blob[off : off + n]


def _unpack_vec(blob: bytes, off: int):
    (n,) = struct.unpack_from("<I", _take(blob, off, 4), 0)
    off += 4
    if n > 1 << 24:
        raise ProtocolError(ERR_PAYLOAD, f"vector length {n} implausible")
    raw = _take(blob, off, 8 * n)
    return np.frombuffer(raw, dtype="<f8").copy(), off + 8 * n


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _unpack_str(blob: bytes, off: int):
    (n,) = struct.unpack_from("<I", _take(blob, off, 4), 0)
    off += 4
    if n > 1 << 20:
        raise ProtocolError(ERR_PAYLOAD, f"string length {n} implausible")
    raw = _take(blob, off, n)
    try:
        return raw.decode("utf-8"), off + n
    except UnicodeDecodeError as e:
        raise ProtocolError(ERR_PAYLOAD, f"bad utf-8: {e}") from None


@dataclass
class GetChunk:
    TYPE = 1
    obs: np.ndarray

    def encode_payload(self) -> bytes:
        return _pack_vec(self.obs)

    @classmethod
    def decode_payload(cls, blob: bytes):
        obs, off = _unpack_vec(blob, 0)
        _expect_end(blob, off)
        return cls(obs=obs)

    def to_json_obj(self) -> dict:
        return {"type": "get_chunk", "obs": self.obs.tolist()}


@dataclass
class ChunkReply:
    TYPE = 2
    chunk: np.ndarray
    policy_version: int

    def encode_payload(self) -> bytes:
        return _pack_vec(self.chunk) + struct.pack("<I", self.policy_version)

    @classmethod
    def decode_payload(cls, blob: bytes):
        chunk, off = _unpack_vec(blob, 0)
        (version,) = struct.unpack_from("<I", _take(blob, off, 4), 0)
        _expect_end(blob, off + 4)
        return cls(chunk=chunk, policy_version=version)

    def to_json_obj(self) -> dict:
        return {"type": "chunk_reply", "chunk": self.chunk.tolist(), "policy_version": self.policy_version}


@dataclass
class PushTransition:
    TYPE = 3
    transition: ChunkTransition

    def encode_payload(self) -> bytes:
        return encode_transition(self.transition)

    @classmethod
    def decode_payload(cls, blob: bytes):
        try:
            return cls(transition=decode_transition(blob))
        except Exception as e:
            raise ProtocolError(ERR_PAYLOAD, f"bad transition: {e}") from None

    def to_json_obj(self) -> dict:
        t = self.transition
        return {
            "type": "push_transition",
            "obs": t.obs.tolist(),
            "chunk": t.chunk.tolist(),
            "rewards": t.rewards.tolist(),
            "next_obs": t.next_obs.tolist(),
            "done": t.done,
            "mask": [bool(m) for m in t.mask],
            "source": t.source,
            "truncated": t.truncated,
        }


@dataclass
class InterventionNotice:
    TYPE = 4
    overrides: list  # [(step, action array)] within the executed window

    def encode_payload(self) -> bytes:
        parts = [struct.pack("<I", len(self.overrides))]
        for step, action in self.overrides:
            parts.append(struct.pack("<I", int(step)))
            parts.append(_pack_vec(action))
        return b"".join(parts)

    @classmethod
    def decode_payload(cls, blob: bytes):
        (n,) = struct.unpack_from("<I", _take(blob, 0, 4), 0)
        if n > 1 << 16:
            raise ProtocolError(ERR_PAYLOAD, f"override count {n} implausible")
        off = 4
        overrides = []
        for _ in range(n):
            (step,) = struct.unpack_from("<I", _take(blob, off, 4), 0)
            off += 4
            action, off = _unpack_vec(blob, off)
            overrides.append((step, action))
        _expect_end(blob, off)
        return cls(overrides=overrides)

    def to_json_obj(self) -> dict:
        return {
            "type": "intervention_notice",
            "overrides": [{"step": int(s), "action": a.tolist()} for s, a in self.overrides],
        }


@dataclass
class StatsPush:
    TYPE = 5
    step: int
    critic_loss: float
    edit_loss: float
    cfm_loss: float
    alpha: float
    q_mean: float

    def encode_payload(self) -> bytes:
        return struct.pack(
            "<Q5d", self.step, self.critic_loss, self.edit_loss, self.cfm_loss, self.alpha, self.q_mean
        )

    @classmethod
    def decode_payload(cls, blob: bytes):
        if len(blob) != 48:
            raise ProtocolError(ERR_PAYLOAD, f"stats payload must be 48 bytes, got {len(blob)}")
        step, cl, el, fl, al, qm = struct.unpack("<Q5d", blob)
        return cls(step=step, critic_loss=cl, edit_loss=el, cfm_loss=fl, alpha=al, q_mean=qm)

    def to_json_obj(self) -> dict:
        return {
            "type": "stats",
            "step": self.step,
            "critic_loss": self.critic_loss,
            "edit_loss": self.edit_loss,
            "cfm_loss": self.cfm_loss,
            "alpha": self.alpha,
            "q_mean": self.q_mean,
        }


@dataclass
class UiFrame:
    TYPE = 6
    episode: int
    step: int
    chunk_step: int      # k of C within the executing chunk
    chunk_size: int
    reward: bool
    policy_version: int
    gripper: np.ndarray
    objects: list = field(default_factory=list)  # [(name, pose array)]
    intervening: bool = False

    def encode_payload(self) -> bytes:
        parts = [
            struct.pack(
                "<QIIIBIB",
                self.episode,
                self.step,
                self.chunk_step,
                self.chunk_size,
                int(self.reward),
                self.policy_version,
                int(self.intervening),
            ),
            _pack_vec(self.gripper),
            struct.pack("<I", len(self.objects)),
        ]
        for name, pose in self.objects:
            parts.append(_pack_str(name))
            parts.append(_pack_vec(pose))
        return b"".join(parts)

    @classmethod
    def decode_payload(cls, blob: bytes):
        head = _take(blob, 0, 26)
        episode, step, ck, cs, reward, pv, intervening = struct.unpack("<QIIIBIB", head)
        off = 26
        gripper, off = _unpack_vec(blob, off)
        (n,) = struct.unpack_from("<I", _take(blob, off, 4), 0)
        if n > 1 << 16:
            raise ProtocolError(ERR_PAYLOAD, f"object count {n} implausible")
        off += 4
        objects = []
        for _ in range(n):
            name, off = _unpack_str(blob, off)
            pose, off = _unpack_vec(blob, off)
            objects.append((name, pose))
        _expect_end(blob, off)
        return cls(
            episode=episode,
            step=step,
            chunk_step=ck,
            chunk_size=cs,
            reward=bool(reward),
            policy_version=pv,
            gripper=gripper,
            objects=objects,
            intervening=bool(intervening),
        )

    def to_json_obj(self) -> dict:
        return {
            "type": "ui_frame",
            "episode": self.episode,
            "step": self.step,
            "chunk_step": self.chunk_step,
            "chunk_size": self.chunk_size,
            "reward": self.reward,
            "policy_version": self.policy_version,
            "gripper": self.gripper.tolist(),
            "objects": {name: pose.tolist() for name, pose in self.objects},
            "intervening": self.intervening,
        }


@dataclass
class UiIntervene:
    TYPE = 7
    engaged: bool
    command: np.ndarray  # velocity command, A floats
    client_ts: float = 0.0

    def encode_payload(self) -> bytes:
        return struct.pack("<B", int(self.engaged)) + _pack_vec(self.command) + struct.pack("<d", self.client_ts)

    @classmethod
    def decode_payload(cls, blob: bytes):
        engaged = bool(_take(blob, 0, 1)[0])
        command, off = _unpack_vec(blob, 1)
        (ts,) = struct.unpack_from("<d", _take(blob, off, 8), 0)
        _expect_end(blob, off + 8)
        return cls(engaged=engaged, command=command, client_ts=ts)

    def to_json_obj(self) -> dict:
        return {
            "type": "ui_intervene",
            "engaged": self.engaged,
            "command": self.command.tolist(),
            "client_ts": self.client_ts,
        }


@dataclass
class Heartbeat:
    TYPE = 8

    def encode_payload(self) -> bytes:
        return b""

    @classmethod
    def decode_payload(cls, blob: bytes):
        _expect_end(blob, 0)
        return cls()

    def to_json_obj(self) -> dict:
        return {"type": "heartbeat"}


@dataclass
class ErrorFrame:
    TYPE = 9
    code: int
    detail: str = ""

    def encode_payload(self) -> bytes:
        return struct.pack("<B", self.code) + _pack_str(self.detail)

    @classmethod
    def decode_payload(cls, blob: bytes):
        code = _take(blob, 0, 1)[0]
        detail, off = _unpack_str(blob, 1)
        _expect_end(blob, off)
        return cls(code=code, detail=detail)

    def to_json_obj(self) -> dict:
        return {"type": "error", "code": self.code, "detail": self.detail}


MESSAGE_TYPES = {
    cls.TYPE: cls
    for cls in (
        GetChunk,
        ChunkReply,
        PushTransition,
        InterventionNotice,
        StatsPush,
        UiFrame,
        UiIntervene,
        Heartbeat,
        ErrorFrame,
    )
}

WireMessage = (
    GetChunk
    | ChunkReply
    | PushTransition
    | InterventionNotice
    | StatsPush
    | UiFrame
    | UiIntervene
    | Heartbeat
    | ErrorFrame
)


def _expect_end(blob: bytes, off: int) -> None:
    if off != len(blob):
        raise ProtocolError(ERR_PAYLOAD, f"{len(blob) - off} trailing bytes")


def encode(msg) -> bytes:
    payload = msg.encode_payload()
    return struct.pack("<IBB", len(payload) + 2, VERSION, msg.TYPE) + payload


def decode(buf: bytes):
    """Decode one frame; returns (message, bytes consumed)."""
    if len(buf) < 4:
        raise ProtocolError(ERR_TRUNCATED, f"{len(buf)} bytes, need 4 for length")
    (length,) = struct.unpack_from("<I", buf, 0)
    if length < 2:
        raise ProtocolError(ERR_TRUNCATED, f"length {length} below minimum 2")
    if length > 1 << 26:
        raise ProtocolError(ERR_PAYLOAD, f"frame length {length} implausible")
    if len(buf) < 4 + length:
        raise ProtocolError(ERR_TRUNCATED, f"have {len(buf)}, frame needs {4 + length}")
    version = buf[4]
    mtype = buf[5]
    if version != VERSION:
        raise ProtocolError(ERR_VERSION, f"version {version}")
    cls = MESSAGE_TYPES.get(mtype)
    if cls is None:
        raise ProtocolError(ERR_TYPE, f"type {mtype}")
    msg = cls.decode_payload(bytes(buf[6 : 4 + length]))
    return msg, 4 + length


def from_json_obj(obj: dict):
    """Inverse of to_json_obj for the console-facing messages."""
    kind = obj.get("type")
    if kind == "ui_intervene":
        return UiIntervene(
            engaged=bool(obj["engaged"]),
            command=np.asarray(obj["command"], dtype=float),
            client_ts=float(obj.get("client_ts", 0.0)),
        )
    if kind == "heartbeat":
        return Heartbeat()
    if kind == "get_chunk":
        return GetChunk(obs=np.asarray(obj["obs"], dtype=float))
    raise ProtocolError(ERR_TYPE, f"unsupported json message {kind!r}")
