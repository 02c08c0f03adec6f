"""Binary greyscale Netpbm (P5) reading and writing."""
from __future__ import annotations

import os

import numpy as np


class PGMError(ValueError):
    """Malformed or truncated PGM file."""

    def __init__(self, path, msg):
        super().__init__(f"{path}: {msg}")
        self.path = path


def _tokens(data: bytes, path, count: int):
    """Yield the first ``count`` header tokens and the offset of the raster."""
    out = []
    i, n = 0, len(data)
    while len(out) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i >= n:
            raise PGMError(path, "truncated header")
        if data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
            j += 1
        out.append(data[i:j])
        i = j
    # Exactly one whitespace byte separates maxval from the raster.
    if i >= n or not data[i:i + 1].isspace():
        raise PGMError(path, "missing whitespace before raster")
    return out, i + 1


def read_pgm(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Read a P5 file; returns ``(pixels, maxval)`` with integer pixels."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise PGMError(path, "not a binary PGM (P5) file")
    toks, start = _tokens(data[2:], path, 3)
    start += 2
    try:
        width, height, maxval = (int(t) for t in toks)
    except ValueError:
        raise PGMError(path, f"non-integer header fields {toks!r}") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise PGMError(path, f"bad header values {width}x{height} maxval {maxval}")
    dtype = np.dtype("u1") if maxval < 256 else np.dtype(">u2")
    need = width * height * dtype.itemsize
    raster = data[start:start + need]
    if len(raster) < need:
        raise PGMError(path, f"truncated raster: {len(raster)} of {need} bytes")
    pix = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    if pix.max(initial=0) > maxval:
        raise PGMError(path, "pixel value exceeds maxval")
    return pix.astype(np.int64), maxval


def write_pgm(path: str | os.PathLike, pixels: np.ndarray, maxval: int = 255) -> None:
    pix = np.asarray(pixels)
    if pix.ndim != 2:
        raise ValueError("PGM raster must be 2-D")
    if pix.min(initial=0) < 0 or pix.max(initial=0) > maxval:
        raise ValueError("pixel values outside [0, maxval]")
    dtype = "u1" if maxval < 256 else ">u2"
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(pix.astype(dtype).tobytes())


def to_unit(pixels: np.ndarray, maxval: int) -> np.ndarray:
    return pixels.astype(np.float64) / maxval


def from_unit(image: np.ndarray, maxval: int = 255) -> np.ndarray:
    return np.rint(np.clip(image, 0.0, 1.0) * maxval).astype(np.int64)
