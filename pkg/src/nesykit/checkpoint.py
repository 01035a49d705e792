"""Versioned binary checkpoints for named parameter tensors.

Layout: magic "DSLCKPT1", then per parameter: u32 name length, UTF-8
name, u32 rank, u32 dims, raw little-endian float64 payload. All
integers little-endian.
"""

import struct

import numpy as np

MAGIC = b"DSLCKPT1"


def save_checkpoint(path, named_arrays):
    """named_arrays: iterable of (name, array-like); order is preserved."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in named_arrays:
            arr = np.asarray(arr, dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Returns {name: float64 array} in file order."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ValueError("unrecognized checkpoint magic")
    out = {}
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise ValueError("short read")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    while pos < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape)
        out[name] = data.copy()
    return out
