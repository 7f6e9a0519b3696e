"""Versioned single-file container for named arrays plus JSON metadata.

Layout: 8-byte magic, u32 version, u32 metadata length, UTF-8 JSON metadata
(sorted keys, so identical content means identical bytes), then the raw
little-endian C-order payloads concatenated in the order listed under the
metadata's "arrays" key.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .tensor_io import SUPPORTED_DESCRS

FORMAT_VERSION = 1


def write_container(
    path: str | Path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]
) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    index = []
    payloads = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        if arr.dtype.str not in SUPPORTED_DESCRS:
            raise FormatError(f"array '{name}' has unsupported dtype {arr.dtype}")
        index.append({"dtype": arr.dtype.str, "name": name, "shape": list(arr.shape)})
        payloads.append(arr.tobytes())
    header = dict(meta)
    header["arrays"] = index
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(FORMAT_VERSION.to_bytes(4, "little"))
        fh.write(len(blob).to_bytes(4, "little"))
        fh.write(blob)
        for payload in payloads:
            fh.write(payload)


def read_container(
    path: str | Path, magic: bytes
) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:8] != magic:
        raise FormatError(f"{path}: bad magic (expected {magic!r})")
    version = int.from_bytes(raw[8:12], "little")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    meta_len = int.from_bytes(raw[12:16], "little")
    meta_end = 16 + meta_len
    if len(raw) < meta_end:
        raise FormatError(f"{path}: truncated metadata")
    try:
        meta = json.loads(raw[16:meta_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt metadata ({exc})") from exc
    if not isinstance(meta, dict) or "arrays" not in meta:
        raise FormatError(f"{path}: metadata missing array index")
    arrays: dict[str, np.ndarray] = {}
    offset = meta_end
    for entry in meta["arrays"]:
        try:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(int(n) for n in entry["shape"])
            name = entry["name"]
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: corrupt array index entry ({exc})") from exc
        if dtype.str not in SUPPORTED_DESCRS:
            raise FormatError(f"{path}: unsupported dtype {dtype.str!r}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        chunk = raw[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise FormatError(f"{path}: truncated payload for array '{name}'")
        arrays[name] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")
    return meta, arrays
