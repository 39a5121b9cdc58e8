"""Checkpoint files.

Layout: ``b"TSCK"``, u16 version, u32 metadata length, UTF-8 JSON metadata,
then a sequence of named blobs, each: u16 name length, name, u8 ndim,
ndim x u32 dims, little-endian f32 payload. Parameters come first
(``param.<name>``), then optimizer state (``opt.<key>``).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import DatasetFormatError
from .layers import EmbeddingNetwork, NetConfig
from .optim import make_optimizer

MAGIC = b"TSCK"
VERSION = 1


def _blob(name, arr):
    raw = name.encode()
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, net, optimizer=None, extra=None) -> None:
    meta = {
        "net": net.cfg.to_dict(),
        "padding": net.cfg.padding,
        "params": list(net.params),
        "extra": extra or {},
    }
    if optimizer is not None:
        meta["optimizer"] = {"kind": optimizer.kind, "step": optimizer.t, "hyper": optimizer.hyper()}
    body = bytearray()
    for name, p in net.params.items():
        body += _blob(f"param.{name}", p.data)
    if optimizer is not None:
        for key, arr in optimizer.state().items():
            body += _blob(f"opt.{key}", arr)
    mj = json.dumps(meta, sort_keys=True).encode()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", VERSION, len(mj)) + mj + bytes(body))


def read_checkpoint(path):
    """Return ``(metadata, {blob name: array})``."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: not a checkpoint")
    version, mlen = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported checkpoint version {version}")
    off = 10
    meta = json.loads(raw[off:off + mlen])
    off += mlen
    blobs = {}
    while off < len(raw):
        (ln,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + ln].decode()
        off += ln
        (nd,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{nd}I", raw, off)
        off += 4 * nd
        n = int(np.prod(shape)) if nd else 1
        blobs[name] = np.frombuffer(raw, "<f4", n, off).reshape(shape).copy()
        off += 4 * n
    return meta, blobs


def load_checkpoint(path, seed=0):
    """Rebuild ``(network, optimizer or None, metadata)`` from a checkpoint."""
    meta, blobs = read_checkpoint(path)
    net = EmbeddingNetwork(NetConfig.from_dict(meta["net"]), seed=seed)
    net.load_state_dict({k[len("param."):]: v for k, v in blobs.items() if k.startswith("param.")})
    opt = None
    if "optimizer" in meta:
        o = meta["optimizer"]
        opt = make_optimizer(o["kind"], net.params, **o["hyper"])
        opt.t = o["step"]
        opt.load_state({k[len("opt."):]: v for k, v in blobs.items() if k.startswith("opt.")})
    return net, opt, meta
