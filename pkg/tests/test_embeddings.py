"""Embedding binary format: header arithmetic, norms, round trips."""
from __future__ import annotations

import struct

import numpy as np
import pytest

from facecurate import EmbeddingFormatError, load_embeddings, write_embeddings
from facecurate.embeddings import EMBEDDING_MAGIC, VERSION


def header(count, dim, magic=EMBEDDING_MAGIC, version=VERSION):
    return struct.pack("<4sIII", magic, version, count, dim)


def unit_rows(count, dim, seed=0):
    rng = np.random.default_rng(seed)
    vecs = rng.normal(size=(count, dim))
    return (vecs / np.linalg.norm(vecs, axis=1, keepdims=True)).astype(np.float32)


def test_load_declared_shape(tmp_path):
    payload = unit_rows(2, 4)
    path = tmp_path / "e.fceb"
    path.write_bytes(header(2, 4) + payload.tobytes())
    store = load_embeddings(path)
    assert (store.count, store.dim) == (2, 4)
    np.testing.assert_array_equal(store.vectors, payload)


def test_truncated_payload_rejected(tmp_path):
    payload = unit_rows(2, 4).tobytes()
    path = tmp_path / "e.fceb"
    path.write_bytes(header(2, 4) + payload[:-4])
    with pytest.raises(EmbeddingFormatError, match="28 bytes"):
        load_embeddings(path)


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "e.fceb"
    path.write_bytes(header(0, 4, magic=b"NOPE"))
    with pytest.raises(EmbeddingFormatError, match="magic"):
        load_embeddings(path)
    path.write_bytes(header(0, 4, version=9))
    with pytest.raises(EmbeddingFormatError, match="version"):
        load_embeddings(path)


def test_off_unit_row_named(tmp_path):
    rows = unit_rows(3, 4)
    rows[1] *= 0.5
    path = tmp_path / "e.fceb"
    path.write_bytes(header(3, 4) + rows.tobytes())
    with pytest.raises(EmbeddingFormatError, match=r"1 \(norm 0.5"):
        load_embeddings(path)


def test_count_mismatch_with_manifest(tmp_path):
    path = tmp_path / "e.fceb"
    write_embeddings(unit_rows(3, 8), path)
    with pytest.raises(EmbeddingFormatError, match="expects 4"):
        load_embeddings(path, expected_count=4)
    assert load_embeddings(path, expected_count=3).count == 3


def test_write_read_round_trip(tmp_path):
    rows = unit_rows(17, 12, seed=5)
    path = tmp_path / "e.fceb"
    write_embeddings(rows, path)
    store = load_embeddings(path)
    np.testing.assert_array_equal(store.vectors, rows)
    # Writing again is byte-identical.
    first = path.read_bytes()
    write_embeddings(store.vectors, path)
    assert path.read_bytes() == first


def test_norm_tolerance_boundary():
    from facecurate import EmbeddingStore

    row = np.zeros((1, 4), dtype=np.float32)
    row[0, 0] = 1.0009  # inside 1 +/- 1e-3
    EmbeddingStore(vectors=row)
    row2 = row.copy()
    row2[0, 0] = 1.002
    with pytest.raises(EmbeddingFormatError):
        EmbeddingStore(vectors=row2)
