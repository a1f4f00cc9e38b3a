"""Binary field container.

Layout, all little-endian:

    header     <4sH4I3dIH   magic b"NSRL", version, nx ny nz nt, L dt t0, crc32, entries
    directory  <16sHQQ      per entry: name, components, offset, length
    payload    float64 samples, each field ordered (t, z, y, x, component)

Offsets are relative to the start of the payload and the CRC-32 covers the
whole payload. Component count 0 marks a metadata entry holding UTF-8 JSON.
"""
from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .fieldlab import FieldStack, Grid, ValidationError

MAGIC = b"NSRL"
VERSION = 1
HEADER = struct.Struct("<4sH4I3dIH")
ENTRY = struct.Struct("<16sHQQ")
FIELD_ORDER = ("u", "p", "w", "f")
META_NAME = "meta"
_VECTOR = {"u", "w", "f"}


class IntegrityError(ValueError):
    """Container bytes are damaged or inconsistent."""


def _to_disk(name, arr):
    arr = np.asarray(arr, dtype="<f8")
    # memory is (t, [component,] x, y, z); disk is (t, z, y, x[, component])
    if name in _VECTOR:
        return np.ascontiguousarray(arr.transpose(0, 4, 3, 2, 1))
    return np.ascontiguousarray(arr.transpose(0, 3, 2, 1))


def _from_disk(name, flat, grid):
    n, nt = grid.n, grid.nt
    if name in _VECTOR:
        return flat.reshape(nt, n, n, n, 3).transpose(0, 4, 3, 2, 1).copy()
    return flat.reshape(nt, n, n, n).transpose(0, 3, 2, 1).copy()


def _meta_bytes(meta):
    return json.dumps(meta, sort_keys=True, separators=(",", ":"), default=str).encode("utf-8")


def encode(stack: FieldStack) -> bytes:
    g = stack.grid
    chunks, entries, offset = [], [], 0
    for name in FIELD_ORDER:
        arr = getattr(stack, name)
        if arr is None:
            continue
        raw = _to_disk(name, arr).tobytes()
        entries.append((name, 3 if name in _VECTOR else 1, offset, len(raw)))
        chunks.append(raw)
        offset += len(raw)
    meta = _meta_bytes(stack.meta)
    entries.append((META_NAME, 0, offset, len(meta)))
    chunks.append(meta)
    payload = b"".join(chunks)
    head = HEADER.pack(MAGIC, VERSION, g.nx, g.ny, g.nz, g.nt, g.domain_length, g.dt, g.t0,
                       zlib.crc32(payload) & 0xFFFFFFFF, len(entries))
    directory = b"".join(ENTRY.pack(n.encode("ascii"), c, o, ln) for n, c, o, ln in entries)
    return head + directory + payload


def decode(data: bytes) -> FieldStack:
    if len(data) < HEADER.size:
        raise IntegrityError("file shorter than the header")
    magic, version, nx, ny, nz, nt, L, dt, t0, crc, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise IntegrityError(f"bad magic {magic!r}")
    if version != VERSION:
        raise IntegrityError(f"unsupported format version {version}")
    start = HEADER.size + count * ENTRY.size
    if len(data) < start:
        raise IntegrityError("directory truncated")
    payload = memoryview(data)[start:]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise IntegrityError("payload checksum mismatch")
    try:
        grid = Grid(nx, ny, nz, nt, L, dt, t0)
    except ValidationError as exc:
        raise IntegrityError(f"header grid invalid: {exc}") from None
    spans, fields, meta = [], {}, {}
    for i in range(count):
        raw_name, comps, off, length = ENTRY.unpack_from(data, HEADER.size + i * ENTRY.size)
        name = raw_name.rstrip(b"\0").decode("ascii", errors="replace")
        if off + length > len(payload):
            raise IntegrityError(f"entry {name!r} runs past the end of the payload")
        spans.append((off, off + length, name))
        chunk = payload[off:off + length]
        if comps == 0:
            if name != META_NAME:
                raise IntegrityError(f"unknown metadata entry {name!r}")
            meta = json.loads(bytes(chunk).decode("utf-8"))
            continue
        if name not in FIELD_ORDER:
            raise IntegrityError(f"unknown field {name!r}")
        want = nt * nx * ny * nz * comps * 8
        if comps != (3 if name in _VECTOR else 1) or length != want:
            raise IntegrityError(f"field {name!r} has {comps} components / {length} bytes")
        fields[name] = _from_disk(name, np.frombuffer(chunk, dtype="<f8"), grid)
    spans.sort()
    for (a0, a1, an), (b0, _, bn) in zip(spans, spans[1:]):
        if b0 < a1:
            raise IntegrityError(f"entries {an!r} and {bn!r} overlap")
    if "u" not in fields:
        raise IntegrityError("container holds no velocity field")
    return FieldStack(grid, fields["u"], fields.get("p"), fields.get("w"), fields.get("f"), meta)


def write(path, stack: FieldStack) -> int:
    """Write atomically; returns the payload CRC-32."""
    data = encode(stack)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return HEADER.unpack_from(data, 0)[9]


def read(path) -> FieldStack:
    with open(path, "rb") as fh:
        return decode(fh.read())


def checksum(path) -> int:
    with open(path, "rb") as fh:
        return HEADER.unpack(fh.read(HEADER.size))[9]
