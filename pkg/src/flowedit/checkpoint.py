"""Parameter checkpoint serialization.

File layout (all integers little-endian):

    magic   4 bytes  b"CFK1"
    count   u32      number of arrays
    then per array:
      ndim  u32
      dims  u32 * ndim
      data  float64 * prod(dims), row-major

A JSON manifest written alongside records whatever structure is needed to
rebuild the typed parameter objects (widths, activations, chunk shape, ...).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"CFK1"


class CheckpointError(ValueError):
    pass


def save_arrays(path: str | Path, arrays: list[np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for a in arrays:
        a = np.asarray(a, dtype=np.float64)  # tobytes() always emits C order
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape) if a.ndim else b"")
        parts.append(a.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_arrays(path: str | Path) -> list[np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}")
    off = 4
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    arrays = []
    for _ in range(count):
        if off + 4 > len(blob):
            raise CheckpointError("truncated header")
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        nbytes = 8 * n
        if off + nbytes > len(blob):
            raise CheckpointError("truncated payload")
        a = np.frombuffer(blob[off : off + nbytes], dtype="<f8").reshape(dims)
        arrays.append(a.copy())
        off += nbytes
    if off != len(blob):
        raise CheckpointError("trailing bytes after last array")
    return arrays


def save_manifest(path: str | Path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
