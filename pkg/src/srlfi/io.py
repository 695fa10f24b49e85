"""Binary dataset and checkpoint containers, plus CSV export.

Dataset layout (little-endian)::

    8s   magic b"SRLFI-DS"
    u32  format version
    u32  model-name length, then UTF-8 bytes
    u64  n
    u32  parameter dim
    u32  data dim
    i64  seed (-1 when unknown)
    f64  theta block, n x parameter-dim, row-major
    f64  y block, n x data-dim, row-major

Checkpoint layout::

    8s   magic b"SRLFI-CK"
    u32  format version
    u32  header length, then UTF-8 JSON header (architecture, latent,
         weight shapes, training summary, config hash)
    f64  weight blocks in header order
    32s  SHA-256 of everything above
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .networks import GeneratorNet, LatentSpec, MLPArchitecture
from .simulators import Dataset

__all__ = [
    "CHECKPOINT_VERSION",
    "CorruptFileError",
    "DATASET_VERSION",
    "FormatVersionError",
    "export_dataset_csv",
    "load_checkpoint",
    "load_dataset",
    "save_checkpoint",
    "save_dataset",
]

DATASET_MAGIC = b"SRLFI-DS"
CHECKPOINT_MAGIC = b"SRLFI-CK"
DATASET_VERSION = 1
CHECKPOINT_VERSION = 1


class CorruptFileError(ValueError):
    """File is truncated or fails its integrity check."""


class FormatVersionError(ValueError):
    """File was written with an unsupported format version."""


def _read(buf: bytes, offset: int, fmt: str):
    size = struct.calcsize(fmt)
    if offset + size > len(buf):
        raise CorruptFileError("unexpected end of file")
    return struct.unpack_from(fmt, buf, offset), offset + size


def save_dataset(data: Dataset, path) -> None:
    name = data.model_name.encode("utf-8")
    n, p = data.theta.shape
    d = data.y.shape[1]
    seed = -1 if data.seed is None else int(data.seed)
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<II", DATASET_VERSION, len(name)))
        fh.write(name)
        fh.write(struct.pack("<QIIq", n, p, d, seed))
        fh.write(np.ascontiguousarray(data.theta, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(data.y, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    buf = Path(path).read_bytes()
    if buf[:8] != DATASET_MAGIC:
        raise CorruptFileError(f"{path}: not a dataset file")
    (version, name_len), off = _read(buf, 8, "<II")
    if version != DATASET_VERSION:
        raise FormatVersionError(f"{path}: dataset version {version}, expected {DATASET_VERSION}")
    if off + name_len > len(buf):
        raise CorruptFileError("unexpected end of file")
    name = buf[off: off + name_len].decode("utf-8")
    off += name_len
    (n, p, d, seed), off = _read(buf, off, "<QIIq")
    expected = off + 8 * n * (p + d)
    if len(buf) != expected:
        raise CorruptFileError(f"{path}: expected {expected} bytes, found {len(buf)}")
    theta = np.frombuffer(buf, "<f8", n * p, off).reshape(n, p).astype(np.float64)
    y = np.frombuffer(buf, "<f8", n * d, off + 8 * n * p).reshape(n, d).astype(np.float64)
    return Dataset(theta, y, None if seed == -1 else seed, name)


def export_dataset_csv(data: Dataset, path) -> None:
    p, d = data.theta.shape[1], data.y.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"theta_{j}" for j in range(p)] + [f"y_{j}" for j in range(d)])
        for t, y in zip(data.theta, data.y):
            writer.writerow([repr(float(v)) for v in np.concatenate([t, y])])


def save_checkpoint(net: GeneratorNet, path, summary: dict | None = None,
                    config_hash: str = "") -> None:
    header = {
        "kind": "generator",
        "architecture": net.arch.to_dict(),
        "latent": {"dim": net.latent.dim, "family": net.latent.family},
        "shapes": [list(w.shape) for w in net.weights],
        "summary": summary or {},
        "config_hash": config_hash,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = bytearray(CHECKPOINT_MAGIC)
    body += struct.pack("<II", CHECKPOINT_VERSION, len(head))
    body += head
    for w in net.weights:
        body += np.ascontiguousarray(w.data, dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    Path(path).write_bytes(bytes(body))


def read_checkpoint_header(path) -> dict:
    return _parse_checkpoint(Path(path).read_bytes(), path)[0]


def _parse_checkpoint(buf: bytes, path):
    if len(buf) < 8 + 8 + 32 or buf[:8] != CHECKPOINT_MAGIC:
        raise CorruptFileError(f"{path}: not a checkpoint file or truncated")
    (version, head_len), off = _read(buf, 8, "<II")
    if version != CHECKPOINT_VERSION:
        raise FormatVersionError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if hashlib.sha256(buf[:-32]).digest() != buf[-32:]:
        raise CorruptFileError(f"{path}: checksum mismatch")
    header = json.loads(buf[off: off + head_len].decode("utf-8"))
    return header, off + head_len


def load_checkpoint(path) -> tuple[GeneratorNet, dict]:
    """Rebuild the generator stored at ``path``; returns ``(net, header)``."""
    buf = Path(path).read_bytes()
    header, off = _parse_checkpoint(buf, path)
    weights = []
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        if off + 8 * count > len(buf) - 32:
            raise CorruptFileError(f"{path}: weight block overruns file")
        arr = np.frombuffer(buf, "<f8", count, off).reshape(shape).astype(np.float64)
        weights.append(Tensor(arr, requires_grad=True))
        off += 8 * count
    if off != len(buf) - 32:
        raise CorruptFileError(f"{path}: trailing bytes after weight blocks")
    arch = MLPArchitecture.from_dict(header["architecture"])
    latent = LatentSpec(**header["latent"])
    return GeneratorNet(arch, latent, weights), header
