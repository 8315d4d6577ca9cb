"""Binary vector-file I/O.

Little-endian layout shared by embedding stores (magic ``FCEB``) and score
exports (magic ``FCSS``): magic, u32 version (=1), u32 count, u32 dim, then
count x dim IEEE-754 float32 values row-major.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import EmbeddingFormatError
from .types import EmbeddingStore

EMBEDDING_MAGIC = b"FCEB"
SCORES_MAGIC = b"FCSS"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def read_vector_file(path: str | Path, magic: bytes) -> np.ndarray:
    """Read a count x dim float32 matrix, checking header arithmetic."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise EmbeddingFormatError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: file shorter than header ({len(blob)} bytes)")
    got_magic, version, count, dim = _HEADER.unpack_from(blob)
    if got_magic != magic:
        raise EmbeddingFormatError(f"{path}: bad magic {got_magic!r}, expected {magic!r}")
    if version != VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported version {version}")
    expected_bytes = count * dim * 4
    payload = len(blob) - _HEADER.size
    if payload != expected_bytes:
        raise EmbeddingFormatError(
            f"{path}: header declares {count} x {dim} float32 "
            f"({expected_bytes} bytes) but payload is {payload} bytes"
        )
    vectors = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(count, dim)
    return vectors.view(np.float32)


def write_vector_file(matrix: np.ndarray, path: str | Path, magic: bytes) -> None:
    arr = np.ascontiguousarray(matrix, dtype="<f4")
    if arr.ndim != 2:
        raise EmbeddingFormatError(f"expected 2-D matrix, got shape {arr.shape}")
    count, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, VERSION, count, dim))
        fh.write(arr.tobytes())


def load_embeddings(path: str | Path, expected_count: int | None = None) -> EmbeddingStore:
    """Load an embedding store, checking header arithmetic and row norms."""
    vectors = read_vector_file(path, EMBEDDING_MAGIC)
    if expected_count is not None and vectors.shape[0] != expected_count:
        raise EmbeddingFormatError(
            f"{path}: store holds {vectors.shape[0]} rows but the manifest "
            f"expects {expected_count}"
        )
    return EmbeddingStore(vectors=vectors)


def write_embeddings(vectors: np.ndarray, path: str | Path) -> None:
    write_vector_file(vectors, path, EMBEDDING_MAGIC)
