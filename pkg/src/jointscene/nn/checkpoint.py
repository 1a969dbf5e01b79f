"""Versioned binary checkpoints.

Layout: 8-byte magic, little-endian uint32 header length, a JSON header
(sorted keys) describing every tensor, then the raw little-endian tensor
bytes in header order. The format has no timestamps, so identical models
produce identical files.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .network import CRNN, NetworkConfig

MAGIC = b"JSCKPT01"
VERSION = 1


def _to_jsonable(state):
    if isinstance(state, dict):
        return {k: _to_jsonable(v) for k, v in state.items()}
    if isinstance(state, (np.integer,)):
        return int(state)
    return state


def write_checkpoint(path, net: CRNN, metadata: dict | None = None) -> Path:
    tensors = {**{f"param/{k}": v for k, v in net.parameters().items()},
               **{f"buffer/{k}": v for k, v in net.buffers().items()}}
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str.lstrip("<>|="),
                        "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "version": VERSION,
        "network_config": net.config.to_dict(),
        "config_hash": net.config.digest(),
        "dtype": net.dtype.name,
        "dropout_rng_state": _to_jsonable(net.dropout_rng.bit_generator.state),
        "tensors": entries,
        "metadata": metadata or {},
    }
    head = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)
    return path


def read_checkpoint(path) -> tuple[CRNN, dict]:
    """Rebuild the network; returns ``(net, header)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack_from("<I", raw, 8)
    header = json.loads(raw[12:12 + n])
    if header["version"] != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
    config = NetworkConfig.from_dict(header["network_config"])
    if config.digest() != header["config_hash"]:
        raise ValueError(f"{path}: config hash mismatch")
    net = CRNN(config, dtype=header["dtype"])
    base = 12 + n
    params, buffers = {}, {}
    for e in header["tensors"]:
        arr = np.frombuffer(raw, dtype="<" + e["dtype"], count=int(np.prod(e["shape"])),
                            offset=base + e["offset"]).reshape(e["shape"])
        kind, name = e["name"].split("/", 1)
        (params if kind == "param" else buffers)[name] = arr
    net.set_parameters(params)
    net.set_buffers(buffers)
    net.dropout_rng.bit_generator.state = header["dropout_rng_state"]
    return net, header


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
