"""Model container: JSON header followed by raw little-endian tensor bytes.

Layout::

    b"FSQCKPT1"                 8-byte magic
    uint64 little-endian        header length N
    N bytes UTF-8 JSON          {"kind", "meta", "tensors": [{name, dtype, shape, offset, nbytes}]}
    tensor blob                 C-order little-endian arrays, offsets relative to blob start
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"FSQCKPT1"


def save_checkpoint(path, kind: str, tensors: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        dt = arr.dtype.newbyteorder("<")
        raw = arr.astype(dt, copy=False).tobytes(order="C")
        entries.append({"name": name, "dtype": dt.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"kind": kind, "meta": meta, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen])
    blob = memoryview(data)[16 + hlen:]
    tensors = {}
    for e in header["tensors"]:
        raw = blob[e["offset"]:e["offset"] + e["nbytes"]]
        tensors[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).astype(
            np.dtype(e["dtype"]).newbyteorder("="), copy=True)
    return header["kind"], tensors, header["meta"]
