"""Named-array container file.

One file holds any number of named n-d arrays plus a JSON metadata blob.
Layout (all integers little-endian, bytes exactly as written):

    bytes 0..7    magic b"NARRAY1\\n"
    bytes 8..15   uint64 header length L
    bytes 16..16+L-1  UTF-8 JSON header:
        {"arrays": [{"name", "dtype", "shape", "offset", "nbytes"}, ...],
         "meta": {...}}
    payload       concatenated row-major little-endian array bytes;
                  offsets are relative to the payload start

Writing the same arrays and metadata twice produces identical bytes.
"""

from __future__ import annotations

import json

import numpy as np

MAGIC = b"NARRAY1\n"

_ALLOWED_DTYPES = {"float32", "float64", "int32", "int64", "uint8"}


def save_arrays(path, arrays: dict, meta: dict | None = None):
    """Write name -> ndarray mappings plus optional JSON metadata."""
    entries = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.name
        if dtype not in _ALLOWED_DTYPES:
            raise ValueError(f"unsupported dtype {dtype!r} for array {name!r}")
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                        "offset": len(payload), "nbytes": len(raw)})
        payload.extend(raw)
    header = json.dumps({"arrays": entries, "meta": meta or {}},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        f.write(payload)


def load_arrays(path):
    """Read a container; returns (dict name -> ndarray, meta dict)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a named-array container (bad magic)")
    hlen = int.from_bytes(blob[8:16], "little")
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    payload = blob[16 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        if e["dtype"] not in _ALLOWED_DTYPES:
            raise ValueError(f"{path}: unsupported dtype {e['dtype']!r}")
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"]).newbyteorder("<"))
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(e["dtype"])
    return arrays, header["meta"]
