"""Deterministic named RNG substreams.

Every stochastic operation in the system receives an explicit generator;
there is no global RNG state.  Substreams are derived from a root seed and
a name path via SHA-256, feeding a counter-based Philox generator, so the
same (seed, path) always yields the same stream on any platform.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, *path) -> np.random.Generator:
    """Independent generator for (seed, *path).

    Path components may be strings or integers; they are folded into the
    Philox key so unrelated substreams never collide by accident.
    """
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for part in path:
        h.update(b"/")
        h.update(str(part).encode())
    key = np.frombuffer(h.digest()[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, *path) -> int:
    """Stable 31-bit integer seed for (seed, *path); feeds env resets."""
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for part in path:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:4], "little") & 0x7FFFFFFF


def generator_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator (for crash recovery)."""
    state = rng.bit_generator.state
    return {
        "bit_generator": state["bit_generator"],
        "state": {k: _jsonable(v) for k, v in state["state"].items()},
        "buffer": _jsonable(state.get("buffer")),
        "buffer_pos": state.get("buffer_pos"),
        "has_uint32": state.get("has_uint32"),
        "uinteger": state.get("uinteger"),
    }


def restore_generator(snapshot: dict) -> np.random.Generator:
    inner = {k: _unjsonable(v) for k, v in snapshot["state"].items()}
    state = {
        "bit_generator": snapshot["bit_generator"],
        "state": inner,
    }
    if snapshot.get("buffer") is not None:
        state["buffer"] = np.array(snapshot["buffer"], dtype=np.uint64)
        state["buffer_pos"] = snapshot["buffer_pos"]
    if snapshot.get("has_uint32") is not None:
        state["has_uint32"] = snapshot["has_uint32"]
        state["uinteger"] = snapshot["uinteger"]
    bg = np.random.Philox()
    bg.state = state
    return np.random.Generator(bg)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _unjsonable(v):
    if isinstance(v, list):
        return np.array(v, dtype=np.uint64)
    return v
