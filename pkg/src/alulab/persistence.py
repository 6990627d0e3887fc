"""Little-endian binary formats for model checkpoints and datasets.

Checkpoint (``ALU1``)::

    magic "ALU1" | version u16 | kind u16 | record count u32
    per record: name length u32 | name utf-8 | rank u32 | extents u32 * rank | f32 payload

Dataset (``ALUD``)::

    magic "ALUD" | version u16 | n u32 | d u32 | M u32 | f32 features (n*d) | u32 labels (n)

Readers validate every field and raise :class:`FormatError` with the byte
offset of the first problem; nothing is returned from a malformed file.
"""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

from alulab.data import Dataset
from alulab.errors import FormatError
from alulab.models import VAE, LogitClassifier

CHECKPOINT_MAGIC = b"ALU1"
DATASET_MAGIC = b"ALUD"
CHECKPOINT_VERSION = 1
DATASET_VERSION = 1
KINDS = {1: LogitClassifier, 2: VAE}
KIND_CODES = {cls: code for code, cls in KINDS.items()}


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file: expected {n} bytes of {what}, {len(self.buf) - self.pos} left", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))

    def header(self, magic: bytes, version: int) -> None:
        got = self.take(4, "magic")
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
        (v,) = self.unpack("H", "version")
        if v != version:
            raise FormatError(f"unsupported format version {v}; this reader understands version {version}", 4)

    def finish(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError(f"{len(self.buf) - self.pos} trailing bytes", self.pos)


def _atomic_write(path, payload: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# -- checkpoints ----------------------------------------------------------------


def checkpoint_bytes(model) -> bytes:
    code = KIND_CODES.get(type(model))
    if code is None:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")
    params = model.params_
    parts = [CHECKPOINT_MAGIC, struct.pack("<HHI", CHECKPOINT_VERSION, code, len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(model, path) -> None:
    _atomic_write(path, checkpoint_bytes(model))


def parse_checkpoint(buf: bytes, expected: type | None = None):
    r = _Reader(buf)
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    kind_at = r.pos
    code, count = r.unpack("HI", "kind and record count")
    cls = KINDS.get(code)
    if cls is None:
        raise FormatError(f"unknown model kind {code}", kind_at)
    if expected is not None and cls is not expected:
        raise FormatError(f"checkpoint holds a {cls.__name__}, expected {expected.__name__}", kind_at)
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("I", "name length")
        name_at = r.pos
        try:
            name = r.take(name_len, "parameter name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError("parameter name is not utf-8", name_at) from exc
        (rank,) = r.unpack("I", "rank")
        if rank > 8:
            raise FormatError(f"implausible rank {rank} for {name!r}", r.pos - 4)
        shape = r.unpack(f"{rank}I", "extents") if rank else ()
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(r.take(4 * size, f"payload of {name!r}"), dtype="<f4")
        params[name] = data.astype(np.float32).reshape(shape)
    r.finish()
    try:
        return cls.from_params(params)
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing parameter {exc}", len(buf)) from exc


def load_checkpoint(path, expected: type | None = None):
    with open(path, "rb") as fh:
        return parse_checkpoint(fh.read(), expected)


# -- datasets -------------------------------------------------------------------


def dataset_bytes(ds: Dataset) -> bytes:
    head = DATASET_MAGIC + struct.pack("<HIII", DATASET_VERSION, ds.n, ds.d, ds.n_classes)
    return head + np.ascontiguousarray(ds.features, dtype="<f4").tobytes() + ds.labels.astype("<u4").tobytes()


def save_dataset(ds: Dataset, path) -> None:
    _atomic_write(path, dataset_bytes(ds))


def parse_dataset(buf: bytes, split: str = "train", seed: int = 0) -> Dataset:
    r = _Reader(buf)
    r.header(DATASET_MAGIC, DATASET_VERSION)
    n, d, m = r.unpack("III", "shape header")
    features = np.frombuffer(r.take(4 * n * d, "features"), dtype="<f4").reshape(n, d)
    labels_at = r.pos
    labels = np.frombuffer(r.take(4 * n, "labels"), dtype="<u4")
    r.finish()
    if n and labels.max() >= m:
        raise FormatError(f"label {int(labels.max())} outside [0, {m})", labels_at)
    return Dataset(features.astype(np.float32), labels.astype(np.int64), m, split=split, seed=seed)


def load_dataset(path, split: str = "train", seed: int = 0) -> Dataset:
    with open(path, "rb") as fh:
        return parse_dataset(fh.read(), split, seed)
