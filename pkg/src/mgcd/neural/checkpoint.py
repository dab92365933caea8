"""Binary parameter container.

Layout: ``b"MGCD"`` | u32 format version | u64 header length | UTF-8 JSON
header ``{name: {"shape", "dtype", "byte_offset"}}`` | little-endian raw
payloads. Offsets are relative to the start of the payload section.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MGCD"
FORMAT_VERSION = 1
_DTYPES = {"f32": "<f4", "f64": "<f8", "i64": "<i8"}
_NAMES = {np.dtype("<f4"): "f32", np.dtype("<f8"): "f64", np.dtype("<i8"): "i64"}


class CheckpointError(ValueError):
    pass


def dumps(arrays: dict[str, np.ndarray]) -> bytes:
    header = {}
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        le = arr.dtype.newbyteorder("<")
        if le not in _NAMES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = np.ascontiguousarray(arr, dtype=le).tobytes()
        header[name] = {"shape": list(arr.shape), "dtype": _NAMES[le], "byte_offset": offset}
        chunks.append(raw)
        offset += len(raw)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + b"".join(chunks)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise CheckpointError("not an MGCD container (bad magic)")
    version, head_len = struct.unpack_from("<IQ", blob, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported container version {version}")
    start = 16
    header = json.loads(blob[start:start + head_len].decode("utf-8"))
    payload = start + head_len
    out = {}
    for name, meta in sorted(header.items(), key=lambda kv: kv[1]["byte_offset"]):
        dt = np.dtype(_DTYPES[meta["dtype"]])
        count = int(np.prod(meta["shape"], dtype=np.int64))
        begin = payload + meta["byte_offset"]
        end = begin + count * dt.itemsize
        if end > len(blob):
            raise CheckpointError(f"{name}: payload truncated")
        out[name] = np.frombuffer(blob, dtype=dt, count=count, offset=begin).reshape(meta["shape"]).copy()
    return out


def save(path, arrays: dict[str, np.ndarray]):
    Path(path).write_bytes(dumps(arrays))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
