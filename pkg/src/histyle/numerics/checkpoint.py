"""Tensor checkpoint files: one-line JSON header + little-endian raw arrays.

Layout: a compact JSON object terminated by a newline, listing format version,
free-form metadata, and per-tensor (name, shape, dtype) in write order;
immediately followed by each array's raw bytes, little-endian, C order.
"""

import json

import numpy as np

FORMAT = "histyle-checkpoint-v1"


def save_checkpoint(path, tensors, meta=None):
    entries = []
    arrays = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
        })
        arrays.append(np.ascontiguousarray(le))
    header = {"format": FORMAT, "meta": meta or {}, "tensors": entries}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, separators=(",", ":")).encode("utf-8"))
        fh.write(b"\n")
        for arr in arrays:
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path):
    """Returns ({name: ndarray}, meta)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        header = json.loads(header_line.decode("utf-8"))
        if header.get("format") != FORMAT:
            raise ValueError(f"unknown checkpoint format: {header.get('format')!r}")
        out = {}
        for entry in header["tensors"]:
            dtype = np.dtype(entry["dtype"]).newbyteorder("<")
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise ValueError(f"truncated checkpoint at tensor '{entry['name']}'")
            arr = np.frombuffer(raw, dtype=dtype).reshape(shape)
            out[entry["name"]] = arr.astype(np.dtype(entry["dtype"]))
    return out, header.get("meta", {})
