"""Binary layouts: spectrogram cache files and 8-bit PGM images."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from vser.errors import FormatError

CACHE_MAGIC = b"VSER"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sHHH")


def encode_cache(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 2:
        raise FormatError(f"cache images must be 2-D, got shape {image.shape}")
    height, width = image.shape
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, height, width)
    return header + np.ascontiguousarray(image, dtype="<f4").tobytes()


def decode_cache(blob: bytes) -> np.ndarray:
    if len(blob) < _CACHE_HEADER.size:
        raise FormatError("truncated cache header")
    magic, version, height, width = _CACHE_HEADER.unpack_from(blob)
    if magic != CACHE_MAGIC:
        raise FormatError(f"bad cache magic {magic!r}")
    if version != CACHE_VERSION:
        raise FormatError(f"unsupported cache version {version}")
    payload = blob[_CACHE_HEADER.size :]
    if len(payload) != 4 * height * width:
        raise FormatError(f"cache payload is {len(payload)} bytes, expected {4 * height * width}")
    return np.frombuffer(payload, dtype="<f4").reshape(height, width).astype(np.float32)


def write_cache(path, image: np.ndarray) -> bytes:
    """Write one cache file and return the bytes written (for hashing)."""
    blob = encode_cache(image)
    Path(path).write_bytes(blob)
    return blob


def read_cache(path) -> np.ndarray:
    return decode_cache(Path(path).read_bytes())


def write_pgm(path, image: np.ndarray) -> None:
    """Binary P5 PGM; ``image`` holds values in [0, 1], stored as round(v * 255)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise FormatError(f"PGM images must be 2-D, got shape {image.shape}")
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    height, width = pixels.shape
    Path(path).write_bytes(f"P5\n{width} {height}\n255\n".encode("ascii") + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Load a P5 PGM written by :func:`write_pgm`, scaled back to [0, 1]."""
    blob = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM: {tokens[0]!r}")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"only 8-bit PGM supported, maxval={maxval}")
    data = blob[pos + 1 : pos + 1 + width * height]
    if len(data) != width * height:
        raise FormatError("truncated PGM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).astype(np.float64) / 255.0
