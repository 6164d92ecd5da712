"""Versioned little-endian container: JSON header plus named arrays plus a 64-bit checksum.

Layout::

    magic[4]  u16 version  u32 header_len  header_json  u32 n_arrays
    n_arrays x (u16 name_len, name, u8 dtype_code, u8 ndim, u32 dims[ndim], data)
    u64 checksum   # blake2b-64 of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {dt: code for code, dt in _DTYPES.items()}


class ContainerError(ValueError):
    pass


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def pack(magic: bytes, header: dict, arrays: dict[str, np.ndarray]) -> bytes:
    meta = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [magic, struct.pack("<HI", VERSION, len(meta)), meta, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise ContainerError(f"unsupported dtype {arr.dtype} for {name!r}")
        key = name.encode()
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<BB", _CODES[dt], arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=dt).tobytes())
    body = b"".join(parts)
    return body + _checksum(body)


def unpack(blob: bytes, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < 18:
        raise ContainerError("truncated file")
    if blob[:4] != magic:
        raise ContainerError(f"bad magic {blob[:4]!r}, expected {magic!r}")
    body, stored = blob[:-8], blob[-8:]
    if _checksum(body) != stored:
        raise ContainerError("checksum mismatch (corrupted or truncated file)")
    version, meta_len = struct.unpack_from("<HI", body, 4)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 10
    try:
        header = json.loads(body[pos : pos + meta_len])
        pos += meta_len
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", body, pos)
            name = body[pos + 2 : pos + 2 + klen].decode()
            pos += 2 + klen
            code, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            dt = _DTYPES[code]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            if pos + nbytes > len(body):
                raise ContainerError(f"array {name!r} runs past end of file")
            arrays[name] = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape).copy()
            pos += nbytes
    except (struct.error, KeyError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"malformed container: {exc}") from exc
    if pos != len(body):
        raise ContainerError("trailing bytes after last array")
    return header, arrays
