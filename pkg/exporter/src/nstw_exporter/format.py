"""Standalone NSTW v1 writer/reader.

Implements the documented binary layout directly (magic "NSTW", u16
version, u16-length metadata blob of key=value lines, u32 entry count,
then per entry: u16 name length + name, u8 rank, rank x u32 extents,
row-major little-endian float32 values). Kept independent of the engine
package on purpose: the file format is the interface.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"NSTW"
VERSION = 1


class FormatError(ValueError):
    pass


def write_nstw(path, entries: dict[str, np.ndarray], metadata: dict[str, str]) -> None:
    chunks = [MAGIC, struct.pack("<H", VERSION)]
    blob = "\n".join(f"{k}={v}" for k, v in metadata.items()).encode("utf-8")
    if len(blob) > 0xFFFF:
        raise FormatError("metadata blob exceeds 64 KiB")
    chunks.append(struct.pack("<H", len(blob)))
    chunks.append(blob)
    chunks.append(struct.pack("<I", len(entries)))
    for name, arr in entries.items():
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if arr.ndim < 1 or arr.ndim > 4 or arr.size == 0:
            raise FormatError(f"entry {name!r}: unsupported shape {arr.shape}")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", arr.ndim))
        for extent in arr.shape:
            chunks.append(struct.pack("<I", extent))
        chunks.append(arr.astype("<f4", copy=False).tobytes())
    payload = b"".join(chunks)
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_nstw(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise FormatError(f"truncated while reading {what}")
        out = blob[pos : pos + n]
        pos += n
        return out

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic")
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    (meta_len,) = struct.unpack("<H", take(2, "metadata length"))
    meta_blob = take(meta_len, "metadata").decode("utf-8")
    metadata = {}
    if meta_blob:
        for line in meta_blob.split("\n"):
            key, _, value = line.partition("=")
            metadata[key] = value
    (count,) = struct.unpack("<I", take(4, "entry count"))
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, "rank"))
        shape = tuple(struct.unpack("<I", take(4, "extent"))[0] for _ in range(rank))
        size = int(np.prod(shape))
        raw = take(4 * size, f"values of {name!r}")
        entries[name] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
    if pos != len(blob):
        raise FormatError("trailing bytes after last entry")
    return entries, metadata
