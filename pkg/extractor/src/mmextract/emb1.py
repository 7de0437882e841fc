"""Writers for the selection toolkit's file interfaces.

EMB1 layout (little-endian): 4-byte magic "EMB1", uint32 dim, uint64 count,
then count*dim float32 values row-major. The manifest is JSON Lines with
keys id / label / category / source; line k describes embedding row k.
Implemented here against the documented formats, so this package needs only
the files to interoperate with the selection toolkit.
"""

from __future__ import annotations

import json
import struct

import numpy as np

HEADER = struct.Struct("<4sIQ")


def write_emb1(values: np.ndarray, path) -> None:
    arr = np.ascontiguousarray(values, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(b"EMB1", arr.shape[1], arr.shape[0]))
        fh.write(arr.tobytes())


def write_manifest(records, path) -> None:
    """records: iterable of objects with id / label / category attributes."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            obj = {"id": record.id}
            if record.label is not None:
                obj["label"] = record.label
            if record.category is not None:
                obj["category"] = record.category
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")
