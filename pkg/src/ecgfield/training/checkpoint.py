"""Checkpoint files: named float64 tensors plus a JSON config echo.

Layout (little-endian)::

    b"ECGCKPT1"  u16 version  u32 config_len  config (utf-8 JSON)
    u32 n_tensors
    n_tensors x ( u16 name_len, name utf-8, u8 ndim, ndim x u32 dims, u64 offset )
    f64 blob (offset counts float64 elements from the blob start)
    u32 CRC32 of every preceding byte
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import BadMagic, ChecksumMismatch, VersionMismatch

MAGIC = b"ECGCKPT1"
VERSION = 1


def checkpoint_to_bytes(tensors: dict, config: dict) -> bytes:
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(cfg)), cfg, struct.pack("<I", len(tensors))]
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<Q", offset))
        blobs.append(arr.tobytes(order="C"))
        offset += arr.size
    body = b"".join(parts) + b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body))


def checkpoint_from_bytes(blob: bytes):
    """Returns ``(tensors, config)``."""
    if blob[:len(MAGIC)] != MAGIC:
        raise BadMagic("not a checkpoint file")
    if len(blob) < len(MAGIC) + 6 + 4:
        raise ChecksumMismatch("checkpoint truncated")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumMismatch("checkpoint checksum does not match")
    pos = len(MAGIC)
    version, cfg_len = struct.unpack_from("<HI", body, pos)
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    pos += 6
    try:
        config = json.loads(body[pos:pos + cfg_len].decode("utf-8"))
        pos += cfg_len
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        directory = []
        for _ in range(count):
            (n,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            ndim = body[pos]
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            (offset,) = struct.unpack_from("<Q", body, pos)
            pos += 8
            directory.append((name, shape, offset))
        data = np.frombuffer(body, dtype="<f8", offset=pos)
        tensors = {}
        for name, shape, offset in directory:
            size = int(np.prod(shape, dtype=np.int64))
            if offset + size > data.size:
                raise ValueError(f"tensor {name} runs past the blob")
            tensors[name] = data[offset:offset + size].reshape(shape).astype(np.float64)
    except (struct.error, IndexError, ValueError, UnicodeDecodeError) as exc:
        raise ChecksumMismatch(f"checkpoint body is inconsistent: {exc}") from exc
    return tensors, config


def save_checkpoint(path, tensors: dict, config: dict) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(checkpoint_to_bytes(tensors, config))
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    return checkpoint_from_bytes(Path(path).read_bytes())
