"""``VSCK`` checkpoint files.

Layout (little-endian)::

    magic "VSCK" | version u16 | meta_len u32 | meta (UTF-8 "key = value" lines)
    count u32 | per tensor: name_len u16, name, rank u8, dims u32 * rank, f32 payload

Payloads are float32, so float32 parameters round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from vser.errors import FormatError

MAGIC = b"VSCK"
VERSION = 1


def _encode_meta(meta: Mapping[str, str]) -> bytes:
    lines = []
    for key, value in meta.items():
        if "\n" in key or "=" in key or "\n" in str(value):
            raise FormatError(f"metadata entry {key!r} cannot be encoded")
        lines.append(f"{key} = {value}")
    return "\n".join(lines).encode("utf-8")


def _decode_meta(blob: bytes) -> dict[str, str]:
    meta = {}
    for line in blob.decode("utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition(" = ")
            meta[key] = value
    return meta


def encode_checkpoint(tensors: Mapping[str, torch.Tensor], meta: Mapping[str, str] | None = None) -> bytes:
    meta_blob = _encode_meta(meta or {})
    parts = [MAGIC, struct.pack("<HI", VERSION, len(meta_blob)), meta_blob, struct.pack("<I", len(tensors))]
    for name, tensor in tensors.items():
        name_blob = name.encode("utf-8")
        array = tensor.detach().cpu().numpy()
        parts.append(struct.pack("<H", len(name_blob)))
        parts.append(name_blob)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> tuple[dict[str, torch.Tensor], dict[str, str]]:
    try:
        if blob[:4] != MAGIC:
            raise FormatError(f"bad checkpoint magic {blob[:4]!r}")
        version, meta_len = struct.unpack_from("<HI", blob, 4)
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        pos = 10
        meta = _decode_meta(blob[pos : pos + meta_len])
        pos += meta_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * n > len(blob):
                raise FormatError(f"tensor {name!r} payload truncated")
            array = np.frombuffer(blob, dtype="<f4", count=n, offset=pos).reshape(dims)
            pos += 4 * n
            tensors[name] = torch.from_numpy(array.astype(np.float32))
    except struct.error as exc:
        raise FormatError(f"truncated checkpoint: {exc}") from exc
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after last tensor")
    return tensors, meta


def save_checkpoint(path, tensors: Mapping[str, torch.Tensor], meta: Mapping[str, str] | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(tensors, meta))


def load_checkpoint(path) -> tuple[dict[str, torch.Tensor], dict[str, str]]:
    return decode_checkpoint(Path(path).read_bytes())
