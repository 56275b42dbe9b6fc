"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"PBRL" | u32 version | section* | u64 checksum

    section = u16 name_len | name (utf-8) | u64 payload_len | payload

The ``meta`` section is JSON; every numpy array is lifted out of the state
tree into its own ``arr:<n>`` section holding ``u8 dtype_len | dtype | u8 ndim
| u64 shape[ndim] | raw bytes``. The checksum is an 8-byte BLAKE2b digest of
everything before it and is verified before any section is parsed.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

MAGIC = b"PBRL"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _checksum(data):
    return hashlib.blake2b(data, digest_size=8).digest()


def _lift(obj, arrays):
    if isinstance(obj, np.ndarray):
        key = f"arr:{len(arrays)}"
        arrays.append((key, obj))
        return {"__array__": key}
    if isinstance(obj, dict):
        return {k: _lift(v, arrays) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_lift(v, arrays) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _lower(obj, arrays):
    if isinstance(obj, dict):
        if set(obj) == {"__array__"}:
            return arrays[obj["__array__"]]
        return {k: _lower(v, arrays) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_lower(v, arrays) for v in obj]
    return obj


def _section(name, payload):
    raw = name.encode()
    return struct.pack("<H", len(raw)) + raw + struct.pack("<Q", len(payload)) + payload


def _array_payload(arr):
    arr = np.array(arr, order="C")  # keeps 0-d shape, unlike ascontiguousarray
    dtype = arr.dtype.newbyteorder("<").str.encode()
    head = struct.pack("<B", len(dtype)) + dtype + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()


def dumps(state):
    arrays = []
    meta = _lift(state, arrays)
    body = bytearray(MAGIC + struct.pack("<I", FORMAT_VERSION))
    body += _section("meta", json.dumps(meta, sort_keys=True).encode())
    for key, arr in arrays:
        body += _section(key, _array_payload(arr))
    return bytes(body) + _checksum(bytes(body))


def save(state, path):
    """Write atomically: a partially written file never replaces a good one."""
    data = dumps(state)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return path


def _parse_array(payload, offset):
    try:
        (dlen,) = struct.unpack_from("<B", payload, 0)
        dtype = np.dtype(payload[1:1 + dlen].decode())
        pos = 1 + dlen
        (ndim,) = struct.unpack_from("<B", payload, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", payload, pos)
        pos += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        if len(payload) - pos != count * dtype.itemsize:
            raise ValueError("payload size does not match shape")
        return np.frombuffer(payload, dtype=dtype, count=count, offset=pos).reshape(shape).copy()
    except (struct.error, ValueError, TypeError) as exc:
        raise CheckpointError(f"malformed array section at offset {offset}: {exc}") from None


def loads(data):
    if len(data) < 16:
        raise CheckpointError(f"file too short ({len(data)} bytes) at offset 0")
    if data[:4] != MAGIC:
        raise CheckpointError("bad magic at offset 0")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at offset 4 "
                              f"(expected {FORMAT_VERSION})")
    body, trailer = data[:-8], data[-8:]
    if _checksum(body) != trailer:
        raise CheckpointError(f"checksum mismatch at offset {len(data) - 8}")
    pos = 8
    sections = {}
    while pos < len(body):
        start = pos
        if pos + 2 > len(body):
            raise CheckpointError(f"truncated section header at offset {start}")
        (nlen,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + nlen].decode()
        pos += nlen
        if pos + 8 > len(body):
            raise CheckpointError(f"truncated section header at offset {start}")
        (plen,) = struct.unpack_from("<Q", body, pos)
        pos += 8
        if pos + plen > len(body):
            raise CheckpointError(f"section {name!r} overruns file at offset {start}")
        sections[name] = (start, body[pos:pos + plen])
        pos += plen
    if "meta" not in sections:
        raise CheckpointError("missing meta section at offset 8")
    arrays = {name: _parse_array(payload, off)
              for name, (off, payload) in sections.items() if name != "meta"}
    meta = json.loads(sections["meta"][1].decode())
    return _lower(meta, arrays)


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
