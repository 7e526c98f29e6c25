import struct

import numpy as np
import pytest

from mirecon.datagen import SampleBatch
from mirecon.dataset_io import DatasetManifest, ShapeRecord, iter_dataset, read_dataset, read_manifest, write_dataset
from mirecon.errors import FormatError


def random_batch(q, n_d=6, n_s=10, k=3, seed=0):
    r = np.random.default_rng(seed)
    return SampleBatch(r.normal(size=(q, n_d, 3)).astype(np.float32), r.normal(size=(q, n_s, 3)).astype(np.float32),
                       r.normal(size=(q, n_d, k, 3)).astype(np.float32), r.random(q).astype(np.float32))


def same(a, b):
    return all(getattr(a, f).tobytes() == getattr(b, f).tobytes()
               for f in ("patch", "subsample", "knn_features", "target"))


def test_empty_round_trip(tmp_path):
    p = tmp_path / "e.lmir"
    write_dataset(p, DatasetManifest([]), [])
    m, batches = read_dataset(p)
    assert len(m) == 0 and batches == []


def test_single_shape_round_trip(tmp_path):
    p = tmp_path / "one.lmir"
    b = random_batch(1000, n_d=20, n_s=30, k=5)
    rec = ShapeRecord("cube", 20000, 1000, 7, {"alpha_p": 0.5, "beta": 0.03}, 0.1)
    m = write_dataset(p, DatasetManifest([rec]), [b])
    m2, (b2,) = read_dataset(p)
    assert same(b, b2)
    assert m2.records[0] == m.records[0]
    assert m2.records[0].noise == {"alpha_p": 0.5, "beta": 0.03}


def test_multi_shape_streaming(tmp_path):
    p = tmp_path / "m.lmir"
    batches = [random_batch(q, seed=q) for q in (5, 0, 12)]
    recs = [ShapeRecord(f"s{i}", 100, len(b), i) for i, b in enumerate(batches)]
    write_dataset(p, DatasetManifest(recs), batches)
    got = list(iter_dataset(p))
    assert [r.mesh for r, _ in got] == ["s0", "s1", "s2"]
    for (_, b2), b in zip(got, batches):
        assert same(b, b2)
    offs = [r.offset for r in read_manifest(p).records]
    assert offs == sorted(offs) and len(set(offs)) == 3


def test_write_is_deterministic(tmp_path):
    b = random_batch(20)
    rec = [ShapeRecord("a", 1, 20, 0)]
    write_dataset(tmp_path / "a.lmir", DatasetManifest(rec), [b])
    write_dataset(tmp_path / "b.lmir", DatasetManifest(rec), [b])
    assert (tmp_path / "a.lmir").read_bytes() == (tmp_path / "b.lmir").read_bytes()


@pytest.fixture
def good_file(tmp_path):
    p = tmp_path / "g.lmir"
    write_dataset(p, DatasetManifest([ShapeRecord("a", 1, 8, 0)]), [random_batch(8)])
    return p


def test_bad_magic(good_file):
    data = bytearray(good_file.read_bytes())
    data[:4] = b"XXXX"
    good_file.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="magic"):
        read_dataset(good_file)


def test_bad_version(good_file):
    data = bytearray(good_file.read_bytes())
    data[4:8] = struct.pack("<I", 99)
    good_file.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="version"):
        read_dataset(good_file)


def test_corrupt_manifest_length(good_file):
    data = bytearray(good_file.read_bytes())
    data[12:20] = struct.pack("<Q", 10**9)
    good_file.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        read_dataset(good_file)


def test_corrupt_record_length(good_file):
    m = read_manifest(good_file)
    data = bytearray(good_file.read_bytes())
    off = m.records[0].offset
    data[off : off + 4] = struct.pack("<I", 9)  # query count no longer matches the blob
    good_file.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="length"):
        read_dataset(good_file)


def test_truncated(good_file):
    data = good_file.read_bytes()
    good_file.write_bytes(data[:-16])
    with pytest.raises(FormatError):
        read_dataset(good_file)
    good_file.write_bytes(data[:10])
    with pytest.raises(FormatError):
        read_dataset(good_file)


def test_count_mismatch(good_file):
    data = bytearray(good_file.read_bytes())
    data[8:12] = struct.pack("<I", 2)
    good_file.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="records"):
        read_dataset(good_file)
