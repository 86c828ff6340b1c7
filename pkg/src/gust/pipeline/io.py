"""Binary dataset file format.

Layout (little-endian)::

    b"GUST" | u32 version=1 | u32 record count | u32 H | u32 W
    per record: u32 nominal_id | u8 role (0 nominal, 1 fabricated) | H*W bytes in {0, 1}
"""

import struct

import numpy as np

from ..exceptions import FormatError
from ..perturb import PairedDataset

MAGIC = b"GUST"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def dumps_dataset(ds):
    n = len(ds)
    h, w = ds.cells.shape[1:] if ds.cells.ndim == 3 else (0, 0)
    rec = np.zeros(n, dtype=[("id", "<u4"), ("role", "u1"), ("px", "u1", (h * w,))])
    rec["id"] = ds.nominal_ids
    rec["role"] = ds.roles
    rec["px"] = ds.cells.reshape(n, h * w)
    return _HEADER.pack(MAGIC, VERSION, n, h, w) + rec.tobytes()


def loads_dataset(blob):
    if len(blob) < _HEADER.size:
        raise FormatError("file too short for a dataset header")
    magic, version, n, h, w = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    dtype = np.dtype([("id", "<u4"), ("role", "u1"), ("px", "u1", (h * w,))])
    if len(blob) != _HEADER.size + n * dtype.itemsize:
        raise FormatError(f"expected {n} records of {dtype.itemsize} bytes")
    rec = np.frombuffer(blob, dtype=dtype, offset=_HEADER.size, count=n)
    if np.any(rec["role"] > 1):
        raise FormatError("role byte outside {0, 1}")
    if np.any(rec["px"] > 1):
        raise FormatError("pixel byte outside {0, 1}")
    try:
        return PairedDataset(rec["id"].astype(np.uint32), rec["role"].copy(),
                             rec["px"].reshape(n, h, w).copy(),
                             variants_per_nominal=_variants(rec))
    except ValueError as exc:
        raise FormatError(str(exc)) from exc


def _variants(rec):
    fab = rec["id"][rec["role"] == 1]
    if fab.size == 0:
        return 0
    counts = np.unique(fab, return_counts=True)[1]
    return int(counts[0]) if np.all(counts == counts[0]) else 0


def write_dataset(ds, path):
    with open(path, "wb") as fh:
        fh.write(dumps_dataset(ds))


def read_dataset(path):
    with open(path, "rb") as fh:
        return loads_dataset(fh.read())
