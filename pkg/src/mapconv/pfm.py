"""Portable float map (PFM) image IO.

PFM is the no-codec float image container: a tiny ASCII header ("PF" for
3-channel, "Pf" for grayscale, then width/height, then a scale whose sign
encodes byte order) followed by raw float32 samples, rows stored bottom-up.
We always write little endian (negative scale) with |scale| = 1.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, FormatError


def write_pfm(image: np.ndarray, path) -> None:
    """Write a (c, h, w) float image with c in {1, 3} as little-endian PFM."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise DimensionError(f"PFM images are (1|3, h, w), got {image.shape}")
    c, h, w = image.shape
    header = f"{'PF' if c == 3 else 'Pf'}\n{w} {h}\n-1.0\n".encode("ascii")
    # PFM rows run bottom-up; samples interleave channels within a row
    data = np.flip(image, axis=1).transpose(1, 2, 0).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(data).tobytes())


def _read_token(raw: bytes, pos: int):
    while pos < len(raw) and raw[pos: pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(raw) and not raw[pos: pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("PFM header ended early")
    return raw[start:pos], pos


def read_pfm(path) -> np.ndarray:
    """Read a PFM file back as a (c, h, w) float32 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, pos = _read_token(raw, 0)
    if magic == b"PF":
        c = 3
    elif magic == b"Pf":
        c = 1
    else:
        raise FormatError(f"bad PFM magic {magic!r}")
    wtok, pos = _read_token(raw, pos)
    htok, pos = _read_token(raw, pos)
    stok, pos = _read_token(raw, pos)
    try:
        w, h, scale = int(wtok), int(htok), float(stok)
    except ValueError as e:
        raise FormatError(f"bad PFM header field: {e}") from None
    if w <= 0 or h <= 0 or scale == 0.0:
        raise FormatError(f"bad PFM geometry {w}x{h}, scale {scale}")
    pos += 1  # single whitespace byte after the scale, then raw samples
    expect = 4 * c * h * w
    if len(raw) - pos != expect:
        raise FormatError(f"PFM payload is {len(raw) - pos} bytes, expected {expect}")
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype, count=c * h * w, offset=pos)
    image = data.reshape(h, w, c).transpose(2, 0, 1)
    image = np.flip(image, axis=1)
    if abs(scale) != 1.0:
        image = image * np.float32(abs(scale))
    return np.ascontiguousarray(image, dtype=np.float32)
