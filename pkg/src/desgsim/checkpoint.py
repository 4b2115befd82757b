"""Versioned model checkpoints.

Layout: magic, little-endian u32 header length, UTF-8 JSON header (config,
vocab tokens in index order, tensor directory with shapes and offsets),
then the raw row-major little-endian float32 payload, then a sha256 of
everything before it.  Round-trips are bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .gnn import EDGE_KEYS, GnnConfig, GnnModel, Vocab

MAGIC = b"DESGNN01"


class CheckpointError(ValueError):
    pass


def save_model(model: GnnModel, path) -> None:
    tensors = []
    payload = bytearray()
    for name in sorted(model.params):
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        tensors.append({"name": name, "shape": list(arr.shape),
                        "offset": len(payload)})
        payload.extend(arr.tobytes())
    tokens = [None] * len(model.vocab.token_index)
    for t, i in model.vocab.token_index.items():
        tokens[i] = t
    header = json.dumps({
        "config": model.config.to_dict(),
        "vocab": tokens,
        "tensors": tensors,
    }, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<I", len(header)) + header + bytes(payload)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(hashlib.sha256(body).digest())


def load_model(path) -> GnnModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 + 32 or not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a model checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch")
    (hlen,) = struct.unpack_from("<I", body, len(MAGIC))
    hstart = len(MAGIC) + 4
    header = json.loads(body[hstart:hstart + hlen].decode("utf-8"))
    payload = body[hstart + hlen:]
    params = {}
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count,
                            offset=t["offset"]).reshape(shape).copy()
        params[t["name"]] = arr
    vocab = Vocab(token_index={t: i for i, t in enumerate(header["vocab"])},
                  edge_index={k: i for i, k in enumerate(EDGE_KEYS)})
    return GnnModel(GnnConfig.from_dict(header["config"]), vocab, params)
