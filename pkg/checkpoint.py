"""Binary checkpoint and feature-cache files.

Layout: an 8-byte little-endian header length, a UTF-8 JSON header, then a
flat row-major payload of little-endian float64 values. Checkpoints list
``(name, shape, offset)`` per tensor in the header; offsets count float64
elements from the start of the payload.
"""

import json
import os

import numpy as np

from errors import DataError

SCHEMA_VERSION = 1
_LENGTH = np.dtype("<u8")
_FLOAT = np.dtype("<f8")


def write_framed(path, header, payload):
    """Write ``header`` and the flattened ``payload`` to ``path`` atomically."""

    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    body = np.ascontiguousarray(payload, dtype=_FLOAT).tobytes()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(np.array([len(encoded)], dtype=_LENGTH).tobytes())
        fh.write(encoded)
        fh.write(body)
    os.replace(tmp, path)


def read_framed(path):
    """Return ``(header, flat float64 payload)``."""

    with open(path, "rb") as fh:
        raw = fh.read()

    if len(raw) < _LENGTH.itemsize:
        raise DataError(f"{path}: truncated header")
    length = int(np.frombuffer(raw[:_LENGTH.itemsize], dtype=_LENGTH)[0])
    start = _LENGTH.itemsize + length
    if start > len(raw) or (len(raw) - start) % _FLOAT.itemsize:
        raise DataError(f"{path}: corrupt frame")

    try:
        header = json.loads(raw[_LENGTH.itemsize:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable header ({exc})") from None

    payload = np.frombuffer(raw[start:], dtype=_FLOAT).astype(np.float64)
    return header, payload


def save_checkpoint(path, arrays, metadata=None):
    """Save named arrays (e.g. ``Layer.state_dict()``) with optional metadata."""

    entries = []
    offset = 0
    for name, values in arrays.items():
        entries.append({"name": name, "shape": list(np.shape(values)), "offset": offset})
        offset += int(np.size(values))

    header = {"schema_version": SCHEMA_VERSION, "tensors": entries, "metadata": metadata or {}}
    payload = np.concatenate([np.ravel(v) for v in arrays.values()]) if arrays else np.zeros(0)
    write_framed(path, header, payload)


def load_checkpoint(path):
    """Return ``(arrays, metadata)`` from a checkpoint written by save_checkpoint."""

    header, payload = read_framed(path)
    if "tensors" not in header:
        raise DataError(f"{path}: not a tensor checkpoint")

    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        if start + count > payload.size:
            raise DataError(f"{path}: tensor {entry['name']} runs past the payload")
        arrays[entry["name"]] = payload[start:start + count].reshape(shape)
    return arrays, header.get("metadata", {})
