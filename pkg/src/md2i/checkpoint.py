"""Flat binary parameter container.

Layout: 8-byte magic, little-endian u64 manifest length, UTF-8 JSON manifest
(``meta`` plus one entry per matrix with name, shape and byte offset into the
payload), then the raw little-endian float64 payload.
"""
import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"MD2ICKPT"


def save_checkpoint(path, arrays, meta=None):
    entries, offset = [], 0
    blobs = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "nbytes": a.nbytes})
        blobs.append(a.tobytes())
        offset += a.nbytes
    manifest = json.dumps({"meta": meta or {}, "entries": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path):
    """Return ``(arrays, meta)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise FormatError(f"{path}: not an md2i checkpoint")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16:16 + mlen].decode())
    payload = memoryview(raw)[16 + mlen:]
    arrays = {}
    for e in manifest["entries"]:
        chunk = payload[e["offset"]:e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise FormatError(f"{path}: truncated payload for {e['name']}")
        arrays[e["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(e["shape"]).astype(np.float64)
    return arrays, manifest["meta"]
