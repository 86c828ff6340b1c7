"""Checkpoint container and its binary file format.

Layout (all integers little-endian u32)::

    b"GCKP" | version=1 | tensor count
    per tensor: name length | UTF-8 name | rank | dims... | float32 LE values (row-major)
    metadata length | UTF-8 JSON metadata
"""

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import FormatError

MAGIC = b"GCKP"
VERSION = 1


@dataclass
class Checkpoint:
    """Named float32 parameter tensors plus JSON-serializable metadata."""

    tensors: dict
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tensors = {str(k): np.ascontiguousarray(v, dtype=np.float32)
                        for k, v in self.tensors.items()}

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (self.tensors.keys() == other.tensors.keys()
                and all(np.array_equal(v, other.tensors[k]) for k, v in self.tensors.items())
                and _canonical(self.meta) == _canonical(other.meta))

    def n_parameters(self):
        return int(sum(v.size for v in self.tensors.values()))

    def to_bytes(self):
        return dumps(self)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(dumps(self))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return loads(fh.read())


def _canonical(meta):
    return json.dumps(meta, sort_keys=True, separators=(",", ":"), allow_nan=False)


def dumps(ckpt):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(ckpt.tensors)))
    for name, arr in ckpt.tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype("<f4").tobytes(order="C"))
    meta = _canonical(ckpt.meta).encode("utf-8")
    buf.write(struct.pack("<I", len(meta)))
    buf.write(meta)
    return buf.getvalue()


class _Reader:
    def __init__(self, data):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("unexpected end of checkpoint data")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count=1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals


def loads(data):
    r = _Reader(data)
    if bytes(r.take(4)) != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(r.u32()):
        name = bytes(r.take(r.u32())).decode("utf-8")
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}")
        rank = r.u32()
        dims = tuple(r.u32(rank)) if rank > 1 else ((r.u32(),) if rank == 1 else ())
        count = int(np.prod(dims, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    meta = json.loads(bytes(r.take(r.u32())).decode("utf-8"))
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after checkpoint metadata")
    return Checkpoint(tensors, meta)
