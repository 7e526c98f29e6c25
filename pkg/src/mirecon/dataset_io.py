"""Binary dataset container.

Layout (little-endian)::

    b"LMIR" | u32 version | u32 n_records | u64 manifest_len | manifest (UTF-8 JSON)
    record blobs, one per shape, at the 64-bit offsets listed in the manifest:
        u32 n_queries | u32 n_d | u32 n_s | u32 k
        f32 patch[q, n_d, 3] | f32 subsample[q, n_s, 3] | f32 knn[q, n_d, k, 3] | f32 target[q]

Offsets are absolute file positions.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import asdict, dataclass, field
from typing import Iterator, List, Tuple

import numpy as np

from .datagen import SampleBatch
from .errors import FormatError

MAGIC = b"LMIR"
VERSION = 1
_HEAD = struct.Struct("<4sIIQ")
_REC = struct.Struct("<IIII")


@dataclass
class ShapeRecord:
    mesh: str
    n_points: int
    n_queries: int
    seed: int
    noise: dict = field(default_factory=dict)
    hole: float = 0.0
    offset: int = 0
    nbytes: int = 0


@dataclass
class DatasetManifest:
    records: List[ShapeRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)


def _record_bytes(batch: SampleBatch) -> bytes:
    q = len(batch)
    n_d, n_s, k = batch.dims if q else (batch.patch.shape[1], batch.subsample.shape[1], batch.knn_features.shape[2])
    parts = [_REC.pack(q, n_d, n_s, k)]
    for arr in (batch.patch, batch.subsample, batch.knn_features, batch.target):
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def write_dataset(path, manifest: DatasetManifest, batches) -> DatasetManifest:
    """Write records in manifest order; offsets/nbytes are filled in and returned."""
    batches = list(batches)
    if len(batches) != len(manifest.records):
        raise ValueError("one SampleBatch per manifest record is required")
    blobs = [_record_bytes(b) for b in batches]
    records = [ShapeRecord(**asdict(r)) for r in manifest.records]
    # manifest length depends on the offsets it stores; iterate to a fixed point
    head_len = 0
    for _ in range(8):
        pos = _HEAD.size + head_len
        for r, blob in zip(records, blobs):
            r.offset, r.nbytes = pos, len(blob)
            pos += len(blob)
        text = json.dumps([asdict(r) for r in records], sort_keys=True).encode("utf-8")
        if len(text) == head_len:
            break
        head_len = len(text)
    else:  # pragma: no cover - offsets converge after a few passes
        raise RuntimeError("manifest layout did not converge")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(records), len(text)))
        fh.write(text)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)
    return DatasetManifest(records)


def read_manifest(path) -> DatasetManifest:
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEAD.size)
        if len(head) < _HEAD.size:
            raise FormatError("file too short for a dataset header")
        magic, version, n_records, mlen = _HEAD.unpack(head)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        if _HEAD.size + mlen > size:
            raise FormatError("manifest length exceeds file size")
        try:
            raw = json.loads(fh.read(mlen).decode("utf-8"))
            records = [ShapeRecord(**r) for r in raw]
        except (ValueError, TypeError) as exc:
            raise FormatError(f"corrupt manifest: {exc}") from None
    if len(records) != n_records:
        raise FormatError(f"header says {n_records} records, manifest has {len(records)}")
    prev = -1
    for r in records:
        if r.offset <= prev or r.offset < _HEAD.size + mlen or r.offset + r.nbytes > size:
            raise FormatError(f"record offset {r.offset} out of order or out of bounds")
        prev = r.offset
    return DatasetManifest(records)


def _read_record(fh, rec: ShapeRecord) -> SampleBatch:
    fh.seek(rec.offset)
    blob = fh.read(rec.nbytes)
    if len(blob) != rec.nbytes or len(blob) < _REC.size:
        raise FormatError("truncated record")
    q, n_d, n_s, k = _REC.unpack_from(blob)
    shapes = [(q, n_d, 3), (q, n_s, 3), (q, n_d, k, 3), (q,)]
    need = _REC.size + 4 * sum(int(np.prod(s)) for s in shapes)
    if need != rec.nbytes or q != rec.n_queries:
        raise FormatError(f"record length mismatch: header implies {need} bytes, manifest says {rec.nbytes}")
    arrays, off = [], _REC.size
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(s).astype(np.float32))
        off += 4 * n
    return SampleBatch(*arrays)


def iter_dataset(path) -> Iterator[Tuple[ShapeRecord, SampleBatch]]:
    """Stream (record, samples) pairs one shape at a time."""
    manifest = read_manifest(path)
    with open(path, "rb") as fh:
        for rec in manifest.records:
            yield rec, _read_record(fh, rec)


def read_dataset(path) -> Tuple[DatasetManifest, List[SampleBatch]]:
    manifest = read_manifest(path)
    with open(path, "rb") as fh:
        return manifest, [_read_record(fh, r) for r in manifest.records]
