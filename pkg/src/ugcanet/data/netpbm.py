"""Binary PGM (P5) and PPM (P6) reading and writing, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .records import DataError

_CHANNELS = {b"P5": 1, b"P6": 3}
_WS = b" \t\r\n"


class NetpbmError(DataError):
    def __init__(self, msg: str, offset: int, path=None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{msg} at byte {offset}")
        self.offset = offset


def _header_fields(buf: bytes, count: int, path) -> tuple:
    """Parse ``count`` whitespace-separated integers after the magic; returns (values, payload offset)."""
    pos = 2
    out = []
    n = len(buf)
    while len(out) < count:
        # whitespace and comments
        while pos < n and (buf[pos] in _WS or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < n and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and buf[pos] not in _WS and buf[pos] != ord("#"):
            pos += 1
        tok = buf[start:pos]
        if not tok:
            raise NetpbmError("truncated header", start, path)
        if not tok.isdigit():
            raise NetpbmError(f"expected integer, got {tok[:16]!r}", start, path)
        out.append(int(tok))
    if pos >= n or buf[pos] not in _WS:
        raise NetpbmError("missing whitespace before payload", pos, path)
    return out, pos + 1


def decode(buf: bytes, path=None) -> np.ndarray:
    """Raw uint8 raster, [C, H, W]."""
    magic = buf[:2]
    if magic not in _CHANNELS:
        raise NetpbmError(f"bad magic {magic!r}", 0, path)
    (w, h, maxval), start = _header_fields(buf, 3, path)
    if maxval != 255:
        raise NetpbmError(f"maxval {maxval} unsupported (need 255)", start - 1, path)
    if w == 0 or h == 0:
        raise NetpbmError(f"empty image {w}x{h}", start - 1, path)
    c = _CHANNELS[magic]
    need = w * h * c
    have = len(buf) - start
    if have < need:
        raise NetpbmError(f"truncated payload: need {need} bytes, have {have}", len(buf), path)
    arr = np.frombuffer(buf, dtype=np.uint8, count=need, offset=start)
    return arr.reshape(h, w, c).transpose(2, 0, 1).copy()


def encode(raster: np.ndarray) -> bytes:
    raster = np.asarray(raster)
    if raster.dtype != np.uint8:
        raise TypeError(f"raster must be uint8, got {raster.dtype}")
    if raster.ndim == 2:
        raster = raster[None]
    c, h, w = raster.shape
    magic = {1: b"P5", 3: b"P6"}.get(c)
    if magic is None:
        raise ValueError(f"need 1 or 3 channels, got {c}")
    return magic + f"\n{w} {h}\n255\n".encode() + raster.transpose(1, 2, 0).tobytes()


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(x, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def load_netpbm(path, mask: bool = False) -> np.ndarray:
    """float32 in [0, 1]; PGM gives [1,H,W], PPM [3,H,W]. ``mask`` binarizes at > 127."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from None
    raw = decode(buf, path)
    if mask:
        return (raw > 127).astype(np.float32)
    return raw.astype(np.float32) / 255.0


def save_netpbm(path, image: np.ndarray) -> None:
    """Write a float [C,H,W] image in [0,1] (or a uint8 raster) as P5/P6."""
    image = np.asarray(image)
    raster = image if image.dtype == np.uint8 else to_uint8(image)
    Path(path).write_bytes(encode(raster))
