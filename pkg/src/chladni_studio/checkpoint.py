"""Binary checkpoint container for trained models.

Layout, all integers little-endian:

    magic   4 bytes  b"CSNN"
    version u8       1
    config  u32 length + UTF-8 JSON (model config and training history)
    tensors repeated: u16 name length, name bytes, u8 dtype (0 = f32),
            u8 rank, rank x u32 dims, raw f32 payload
    crc     u32 CRC32 of everything after the magic

Save then load reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, PatternClassifier, build_model

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint"]

MAGIC = b"CSNN"
FORMAT_VERSION = 1
_DTYPE_F32 = 0


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)

    def build(self) -> PatternClassifier:
        model = build_model(self.config)
        model.load_params(self.params)
        return model


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    body = bytearray()
    body.append(FORMAT_VERSION)
    blob = json.dumps(
        {"model": ckpt.config.to_dict(), "history": ckpt.history},
        sort_keys=True,
    ).encode("utf-8")
    body += struct.pack("<I", len(blob))
    body += blob
    for name, arr in ckpt.params.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        body += struct.pack("<H", len(encoded))
        body += encoded
        body += struct.pack("<BB", _DTYPE_F32, data.ndim)
        body += struct.pack(f"<{data.ndim}I", *data.shape)
        body += data.tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    Path(path).write_bytes(MAGIC + bytes(body))


def load_checkpoint(path: str | Path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 1 + 4 + 4 or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    end = len(raw) - 4  # trailing CRC
    pos = 4
    version = raw[pos]
    pos += 1
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (blob_len,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if pos + blob_len > end:
        raise ValueError(f"{path}: truncated configuration block")
    meta = json.loads(raw[pos:pos + blob_len].decode("utf-8"))
    pos += blob_len

    params: dict[str, np.ndarray] = {}
    while pos < end:
        name = "<unnamed>"

        def need(nbytes: int) -> None:
            if pos + nbytes > end:
                raise ValueError(f"{path}: truncated while reading tensor {name!r}")

        need(2)
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        need(name_len)
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        need(2)
        dtype_id, rank = struct.unpack_from("<BB", raw, pos)
        pos += 2
        if dtype_id != _DTYPE_F32:
            raise ValueError(f"{path}: tensor {name!r} has unknown dtype {dtype_id}")
        need(4 * rank)
        dims = struct.unpack_from(f"<{rank}I", raw, pos)
        pos += 4 * rank
        payload = 4 * int(np.prod(dims, dtype=np.int64)) if rank else 4
        need(payload)
        params[name] = np.frombuffer(raw[pos:pos + payload], dtype="<f4").reshape(dims).copy()
        pos += payload

    (stored_crc,) = struct.unpack_from("<I", raw, end)
    if zlib.crc32(raw[4:end]) != stored_crc:
        raise ValueError(f"{path}: checksum mismatch, file is corrupt")
    return Checkpoint(
        config=ModelConfig.from_dict(meta["model"]),
        params=params,
        history=meta.get("history", []),
    )
