"""Binary checkpoint format.

Layout (all integers little-endian):

    magic     8 bytes  b"DDTCKPT\\0"
    version   u32
    hash_len  u32, then hash_len bytes of UTF-8 manifest hash
    count     u32      number of parameters
    per parameter:
        name_len u32, name (UTF-8)
        ndim     u32, then ndim x u64 shape
        values   prod(shape) x float64 (little-endian, C order)
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"DDTCKPT\x00"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(state, manifest_hash: str = "") -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    h = manifest_hash.encode()
    out.append(struct.pack("<I", len(h)) + h)
    out.append(struct.pack("<I", len(state)))
    for name, value in state.items():
        arr = np.asarray(value, dtype="<f8")
        nb = name.encode()
        out.append(struct.pack("<I", len(nb)) + nb)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes(order="C"))
    return b"".join(out)


def loads(blob: bytes):
    """Returns ``(state, manifest_hash)``."""
    view = memoryview(blob)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated checkpoint")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(8)) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} not supported (expected {VERSION})")
    (hlen,) = struct.unpack("<I", take(4))
    manifest_hash = bytes(take(hlen)).decode()
    (count,) = struct.unpack("<I", take(4))
    state = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode()
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(bytes(take(8 * size)), dtype="<f8").reshape(shape).astype(float)
    if pos != len(view):
        raise CheckpointError("trailing bytes after checkpoint")
    return state, manifest_hash


def save(path, state, manifest_hash: str = "") -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(state, manifest_hash))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
