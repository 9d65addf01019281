"""Netpbm reader/writer for P2, P3, P5 and P6 files."""
from __future__ import annotations

from pathlib import Path

import numpy as np

_CHANNELS = {b"P2": 1, b"P3": 3, b"P5": 1, b"P6": 3}


class PNMError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _header_tokens(buf: bytes, count: int, pos: int, starts: list | None = None):
    """Read ``count`` whitespace-separated header tokens, skipping # comments.

    When ``starts`` is given, the byte offset of each token is appended to it.
    """
    tokens = []
    n = len(buf)
    while len(tokens) < count:
        while pos < n and (buf[pos:pos + 1].isspace() or buf[pos:pos + 1] == b"#"):
            if buf[pos:pos + 1] == b"#":
                while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PNMError("truncated header", pos)
        tok = buf[start:pos]
        if not tok.isdigit():
            raise PNMError(f"expected a decimal number, got {tok[:16]!r}", start)
        tokens.append(int(tok))
        if starts is not None:
            starts.append(start)
    return tokens, pos


def decode_pnm(buf: bytes) -> tuple[np.ndarray, int]:
    """Decode PNM bytes into ((H, W) or (H, W, 3) integer array, maxval)."""
    magic = buf[:2]
    if magic not in _CHANNELS:
        raise PNMError(f"unsupported magic {magic!r}", 0)
    (width, height, maxval), pos = _header_tokens(buf, 3, 2)
    if width == 0 or height == 0:
        raise PNMError(f"empty image {width}x{height}", pos)
    if not 0 < maxval < 65536:
        raise PNMError(f"maxval {maxval} out of range", pos)
    channels = _CHANNELS[magic]
    count = width * height * channels
    if magic in (b"P5", b"P6"):
        if pos >= len(buf) or not buf[pos:pos + 1].isspace():
            raise PNMError("missing whitespace before raster", pos)
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(buf) - pos < need:
            raise PNMError(f"raster truncated: expected {need} bytes, found {len(buf) - pos}",
                           len(buf))
        data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).astype(np.int64)
        offsets = pos + dtype.itemsize * np.arange(count)
    else:
        starts: list[int] = []
        values, _ = _header_tokens(buf, count, pos, starts)
        data = np.array(values, dtype=np.int64)
        offsets = np.array(starts)
    over = np.flatnonzero(data > maxval)
    if over.size:
        i = over[0]
        raise PNMError(f"sample value {int(data[i])} exceeds maxval {maxval}", int(offsets[i]))
    shape = (height, width) if channels == 1 else (height, width, 3)
    return data.reshape(shape), maxval


def read_pnm(path: str | Path) -> np.ndarray:
    data, _ = decode_pnm(Path(path).read_bytes())
    return data


def encode_pnm(image: np.ndarray, binary: bool = True, maxval: int = 255) -> bytes:
    img = np.asarray(image)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim == 2:
        magic = b"P5" if binary else b"P2"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6" if binary else b"P3"
    else:
        raise ValueError(f"cannot encode image of shape {img.shape}")
    if img.size and (img.min() < 0 or img.max() > maxval):
        raise ValueError(f"values must lie in [0, {maxval}]")
    h, w = img.shape[:2]
    header = magic + f"\n{w} {h}\n{maxval}\n".encode()
    ints = img.astype(np.int64)
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        return header + ints.astype(dtype).tobytes()
    flat = ints.reshape(h, -1)
    body = "\n".join(" ".join(str(v) for v in row) for row in flat)
    return header + body.encode() + b"\n"


def write_pnm(path: str | Path, image: np.ndarray, binary: bool = True, maxval: int = 255) -> None:
    Path(path).write_bytes(encode_pnm(image, binary, maxval))


def to_gray8(saliency: np.ndarray) -> np.ndarray:
    """Clip negatives, scale by the max and quantize to 0..255."""
    m = np.clip(np.asarray(saliency, dtype=np.float64), 0.0, None)
    peak = m.max()
    if peak > 0:
        m = m / peak
    return np.round(m * 255).astype(np.uint8)
