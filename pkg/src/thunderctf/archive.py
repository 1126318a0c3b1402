"""Deterministic archive stream for container image pulls.

Wire format, little-endian, no padding, repeated per file:

    [u32 path_len][path utf-8][u64 data_len][data]

Records are emitted in ascending path order so identical file maps always
produce identical bytes.
"""

from __future__ import annotations

import struct

from . import errors


def pack(files: dict[str, bytes]) -> bytes:
    out = bytearray()
    for path in sorted(files):
        raw_path = path.encode("utf-8")
        data = files[path]
        out += struct.pack("<I", len(raw_path))
        out += raw_path
        out += struct.pack("<Q", len(data))
        out += data
    return bytes(out)


def unpack(blob: bytes) -> dict[str, bytes]:
    files: dict[str, bytes] = {}
    off = 0
    n = len(blob)
    while off < n:
        if off + 4 > n:
            raise errors.ValidationError("truncated archive: path length")
        (path_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        if off + path_len > n:
            raise errors.ValidationError("truncated archive: path")
        path = blob[off : off + path_len].decode("utf-8")
        off += path_len
        if off + 8 > n:
            raise errors.ValidationError("truncated archive: data length")
        (data_len,) = struct.unpack_from("<Q", blob, off)
        off += 8
        if off + data_len > n:
            raise errors.ValidationError("truncated archive: data")
        files[path] = bytes(blob[off : off + data_len])
        off += data_len
    return files
