"""Portable binary checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic b"COTNCKPT"
    u32       format version (1)
    u32 + n   model spec name, UTF-8
    u32       entry count
    per entry:
      u32 + n   entry name, UTF-8
      u32       rank
      u64 x r   extents
      u8        dtype tag (1 float32, 2 float64, 3 int64, 4 uint8)
      raw       prod(extents) values, little-endian, row-major

Entry names are prefixed by role: ``param.``, ``buffer.``, ``optim.``,
``ema.``; ``meta.rng`` and ``meta.spec`` hold UTF-8 JSON / YAML as uint8.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"COTNCKPT"
VERSION = 1
_TAGS = {np.dtype("<f4"): 1, np.dtype("<f8"): 2, np.dtype("<i8"): 3, np.dtype("u1"): 4}
_DTYPES = {v: k for k, v in _TAGS.items()}


@dataclass
class Checkpoint:
    spec_name: str
    entries: dict[str, np.ndarray] = field(default_factory=dict)

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.entries.items() if k.startswith(p)}

    def put_text(self, name: str, text: str) -> None:
        self.entries[name] = np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()

    def text(self, name: str) -> str:
        return self.entries[name].tobytes().decode("utf-8")

    def put_json(self, name: str, obj) -> None:
        self.put_text(name, json.dumps(obj, sort_keys=True))

    def json(self, name: str):
        return json.loads(self.text(name))


def to_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    name = ckpt.spec_name.encode("utf-8")
    buf.write(struct.pack("<I", len(name)) + name)
    buf.write(struct.pack("<I", len(ckpt.entries)))
    for key, arr in ckpt.entries.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _TAGS:
            raise TypeError(f"{key}: unsupported dtype {arr.dtype}")
        kb = key.encode("utf-8")
        buf.write(struct.pack("<I", len(kb)) + kb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(struct.pack("<B", _TAGS[dt]))
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    return buf.getvalue()


def from_bytes(raw: bytes) -> Checkpoint:
    view = memoryview(raw)
    if bytes(view[:8]) != MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    pos = 8

    def take(fmt):
        nonlocal pos
        vals = struct.unpack_from(fmt, view, pos)
        pos += struct.calcsize(fmt)
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (n,) = take("<I")
    spec_name = bytes(view[pos:pos + n]).decode("utf-8")
    pos += n
    (count,) = take("<I")
    entries = {}
    for _ in range(count):
        (n,) = take("<I")
        key = bytes(view[pos:pos + n]).decode("utf-8")
        pos += n
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        (tag,) = take("<B")
        dt = _DTYPES[tag]
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(view, dtype=dt, count=size, offset=pos).reshape(shape).copy()
        pos += size * dt.itemsize
        entries[key] = arr.astype(dt.newbyteorder("="), copy=False)
    return Checkpoint(spec_name, entries)


def save(ckpt: Checkpoint, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load(path: str) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
