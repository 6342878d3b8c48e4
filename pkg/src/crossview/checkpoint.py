"""Fixed-layout binary checkpoints.

Layout (all integers little-endian)::

    magic        8 bytes  b"XVIEWCKP"
    version      uint32
    header_len   uint64
    header       JSON, utf-8; lists (name, dtype, shape, offset, nbytes) per array
    arrays       raw little-endian IEEE-754 data, offsets relative to this point
    checksum     uint64, blake2b-64 of every preceding byte
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import LabelSpace
from .errors import ChecksumError, NotFound, VersionError
from .model import ArchConfig, param_names

MAGIC = b"XVIEWCKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    label_space: LabelSpace
    arch: ArchConfig
    params: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    epoch: int = -1
    val_top1: float = float("nan")
    format_version: int = FORMAT_VERSION


def _digest(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def checkpoint_bytes(ckpt: Checkpoint, format_version: int | None = None) -> bytes:
    version = ckpt.format_version if format_version is None else format_version
    arrays, blobs, offset = [], [], 0
    for name in param_names(ckpt.arch):
        arr = np.asarray(ckpt.params[name])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        arrays.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                       "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "label_space": ckpt.label_space.to_dict(),
        "arch": ckpt.arch.to_dict(),
        "config": ckpt.config,
        "epoch": int(ckpt.epoch),
        "val_top1": float(ckpt.val_top1),
        "arrays": arrays,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(MAGIC, version, len(hbytes)) + hbytes + b"".join(blobs)
    return body + struct.pack("<Q", _digest(body))


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(ckpt))
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise NotFound(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < _PREFIX.size + 8:
        raise ChecksumError(f"{path}: file too short")
    magic, version, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ChecksumError(f"{path}: bad magic")
    if version != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    body, (stored,) = data[:-8], struct.unpack("<Q", data[-8:])
    if _digest(body) != stored:
        raise ChecksumError(f"{path}: checksum mismatch (corrupt or truncated)")
    start = _PREFIX.size
    header = json.loads(body[start:start + hlen].decode("utf-8"))
    base = start + hlen
    params = {}
    for spec in header["arrays"]:
        lo = base + spec["offset"]
        raw = body[lo:lo + spec["nbytes"]]
        params[spec["name"]] = np.frombuffer(raw, dtype=np.dtype(spec["dtype"])).reshape(spec["shape"]).copy()
    return Checkpoint(
        label_space=LabelSpace.from_dict(header["label_space"]),
        arch=ArchConfig.from_dict(header["arch"]),
        params=params,
        config=header["config"],
        epoch=header["epoch"],
        val_top1=header["val_top1"],
        format_version=version,
    )
