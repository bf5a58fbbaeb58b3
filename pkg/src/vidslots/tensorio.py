"""Portable tensor container used for clips, feature dumps and checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic  b"VSLTNSR\\0"
    2 bytes   format version (uint16)
    4 bytes   header length N (uint32)
    N bytes   UTF-8 JSON header: tensor table (name, dtype, shape, offset,
              nbytes), payload size, sha256 of the payload, free-form meta
    ...       concatenated raw little-endian tensor payloads
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"VSLTNSR\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sHI")
_DTYPES = {"f4": "<f4", "f8": "<f8", "i4": "<i4", "i8": "<i8", "u1": "|u1", "b1": "|b1"}


class TensorFileError(IOError):
    """Base class for container read failures."""


class BadMagicError(TensorFileError):
    pass


class FormatVersionError(TensorFileError):
    pass


class TruncatedFileError(TensorFileError):
    pass


class ChecksumError(TensorFileError):
    pass


def _dtype_code(arr: np.ndarray) -> str:
    for code, dt in _DTYPES.items():
        if np.dtype(dt) == arr.dtype.newbyteorder("<") or np.dtype(dt) == arr.dtype:
            return code
    raise TypeError(f"unsupported dtype {arr.dtype}")


def encode_tensors(tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> bytes:
    table = []
    chunks = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        table.append({"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "tensors": table,
        "payload_nbytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
        "meta": dict(meta or {}),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(hbytes)) + hbytes + payload


def decode_tensors(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if len(blob) < _PREFIX.size:
        raise TruncatedFileError("file shorter than fixed prefix")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"format version {version} != supported {FORMAT_VERSION}")
    start = _PREFIX.size + hlen
    if len(blob) < start:
        raise TruncatedFileError("file ends inside header")
    try:
        header = json.loads(blob[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"corrupt header: {exc}") from exc
    payload = blob[start:]
    if len(payload) < header["payload_nbytes"]:
        raise TruncatedFileError(f"payload has {len(payload)} of {header['payload_nbytes']} bytes")
    payload = payload[: header["payload_nbytes"]]
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ChecksumError("payload checksum mismatch")
    out = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"]: entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]]).reshape(entry["shape"])
        out[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return out, header["meta"]


def write_tensors(path: str | Path, tensors: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> None:
    Path(path).write_bytes(encode_tensors(tensors, meta))


def read_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return decode_tensors(Path(path).read_bytes())
