"""UTD1 binary tensor dumps.

Layout: magic ``b"UTD1"``, u32 LE rank, ``rank`` u32 LE dims, then the f32 LE
payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

MAGIC = b"UTD1"


class UTDError(ValueError):
    pass


def dumps(arr) -> bytes:
    a = np.ascontiguousarray(np.asarray(arr), dtype="<f4")
    head = MAGIC + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def loads(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise UTDError(f"bad magic {buf[:4]!r} at offset 0")
    if len(buf) < 8:
        raise UTDError("truncated header at offset 4")
    (rank,) = struct.unpack_from("<I", buf, 4)
    end = 8 + 4 * rank
    if len(buf) < end:
        raise UTDError(f"truncated dims at offset 8 (rank {rank})")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(dims)) if rank else 1
    if len(buf) != end + 4 * count:
        raise UTDError(f"payload at offset {end} has {len(buf) - end} bytes, expected {4 * count}")
    return np.frombuffer(buf, dtype="<f4", count=count, offset=end).reshape(dims).astype(np.float32)


def save(path: Union[str, Path], arr) -> None:
    Path(path).write_bytes(dumps(arr))


def load(path: Union[str, Path]) -> np.ndarray:
    return loads(Path(path).read_bytes())


def save_state(directory: Union[str, Path], state: dict) -> None:
    """Write ``manifest.txt`` (ordered names) plus one UTD1 blob per tensor."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (name, arr) in enumerate(state.items()):
        fname = f"{i:04d}.utd"
        save(d / fname, arr)
        lines.append(f"{name}\t{fname}")
    (d / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_state(directory: Union[str, Path]) -> dict:
    d = Path(directory)
    state = {}
    for line in (d / "manifest.txt").read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        name, fname = line.split("\t")
        state[name] = load(d / fname)
    return state
