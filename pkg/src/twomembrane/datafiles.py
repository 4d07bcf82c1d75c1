"""Binary columnar trajectory files: a JSON header plus float64 columns.

Layout: magic line b"TMCOL1\\n", 8-byte little-endian header length, the
UTF-8 JSON header (carrying at least "columns": [names...]), then the
row-major float64 matrix with one column per name.
"""

from __future__ import annotations

import json
import struct

import numpy as np

_MAGIC = b"TMCOL1\n"


def write_columnar(path, header: dict, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    lengths = {len(np.asarray(v)) for v in columns.values()}
    if len(lengths) != 1:
        raise ValueError("columns must share one length")
    n = lengths.pop()
    head = dict(header)
    head["columns"] = names
    head["rows"] = n
    blob = json.dumps(head).encode("utf-8")
    matrix = np.column_stack([np.asarray(columns[k], dtype=np.float64)
                              for k in names]) if n else np.empty((0, len(names)))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(matrix).tobytes())


def read_columnar(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a columnar trajectory file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        names = header["columns"]
        rows = header["rows"]
        data = np.frombuffer(fh.read(), dtype=np.float64)
    matrix = data.reshape(rows, len(names)) if rows else np.empty((0, len(names)))
    columns = {name: matrix[:, k].copy() for k, name in enumerate(names)}
    return header, columns
