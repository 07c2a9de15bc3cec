"""Versioned little-endian container for model weights.

Layout::

    magic      4 bytes        b"DTAE" (autoencoder) or b"DTML" (classifier)
    version    uint16
    n_ints     uint16, then n_ints int64          dimensions and flags
    n_tags     uint16, then n_tags uint8          activation / loss tags
    n_arrays   uint16, then per array:
                   ndim uint8, shape uint64[ndim], float64 data in row-major order
    crc32      uint32 of every preceding byte
"""
from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import CompatibilityError, CorruptBlobError

VERSION = 1


def pack(magic: bytes, ints, tags, arrays) -> bytes:
    parts = [magic, struct.pack("<HH", VERSION, len(ints))]
    parts.append(struct.pack(f"<{len(ints)}q", *ints))
    parts.append(struct.pack("<H", len(tags)))
    parts.append(bytes(tags))
    parts.append(struct.pack("<H", len(arrays)))
    for a in arrays:
        a = np.require(a, dtype="<f8", requirements="C")  # keeps 0-d shapes
        parts.append(struct.pack(f"<B{a.ndim}Q", a.ndim, *a.shape))
        parts.append(a.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptBlobError(f"truncated blob while reading {what}", offset=self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def unpack(data: bytes, magic: bytes):
    """Return (ints, tags, arrays); raise CorruptBlobError with the failing offset."""
    r = _Reader(data)
    got = r.take(4, "magic")
    if got != magic:
        raise CorruptBlobError(f"bad magic {got!r}, expected {magic!r}", offset=0)
    version, n_ints = r.unpack("<HH", "header")
    if version != VERSION:
        raise CompatibilityError(f"blob version {version} unsupported (expected {VERSION})")
    ints = list(r.unpack(f"<{n_ints}q", "dimensions"))
    (n_tags,) = r.unpack("<H", "tag count")
    tags = list(r.take(n_tags, "tags"))
    (n_arrays,) = r.unpack("<H", "array count")
    arrays = []
    for k in range(n_arrays):
        (ndim,) = r.unpack("<B", f"array {k} rank")
        shape = r.unpack(f"<{ndim}Q", f"array {k} shape")
        count = int(np.prod(shape, dtype=np.int64))
        start = r.pos
        raw = r.take(8 * count, f"array {k} data")
        arrays.append(np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64))
        if not np.isfinite(arrays[-1]).all():
            raise CorruptBlobError(f"array {k} holds non-finite values", offset=start)
    crc_offset = r.pos
    (crc,) = r.unpack("<I", "checksum")
    if crc != zlib.crc32(data[:crc_offset]):
        raise CorruptBlobError("checksum mismatch", offset=crc_offset)
    if r.pos != len(data):
        raise CorruptBlobError("trailing bytes after checksum", offset=r.pos)
    return ints, tags, arrays
