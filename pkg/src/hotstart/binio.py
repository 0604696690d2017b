"""Header + payload container shared by scenario, dataset and weight files.

Layout::

    b"HSPF1\\n"                      6-byte magic
    uint64 little-endian            length of the JSON header in bytes
    UTF-8 JSON header               includes an "arrays" list of {name, shape, dtype}
    payloads                        each array row-major, little-endian, in header order

Float payloads are ``<f8`` and integer payloads ``<i8``. The header is
written with sorted keys so identical content gives identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"HSPF1\n"
_DTYPES = {"f8": np.dtype("<f8"), "i8": np.dtype("<i8")}


def write(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    specs = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = "i8" if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool else "f8"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        specs.append({"name": name, "shape": list(arr.shape), "dtype": code})
        blobs.append(data.tobytes(order="C"))
    full = dict(header, arrays=specs)
    head = json.dumps(full, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def read(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a hotstart data file")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    header = json.loads(raw[pos: pos + hlen].decode("utf-8"))
    pos += hlen
    arrays = {}
    for spec in header["arrays"]:
        dt = _DTYPES[spec["dtype"]]
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=pos).reshape(spec["shape"])
        arrays[spec["name"]] = arr.astype(dt.newbyteorder("="), copy=True)
        pos += count * dt.itemsize
    if pos != len(raw):
        raise ValueError(f"{path}: {len(raw) - pos} trailing bytes")
    return header, arrays
