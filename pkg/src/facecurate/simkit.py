"""Batched cosine-similarity computation over unit embeddings.

Scores are dot products of unit vectors, clamped to [-1, 1]; every mean in
this module averages the clamped per-pair scores, so blocked matrix code and
naive per-pair loops agree. Accumulation is in 64-bit floats even though the
store is 32-bit: subjects can hold thousands of images and ranking gaps can
be on the order of 0.01.

Pairwise work is blocked (default 1024 rows per block) so memory stays at
roughly the store itself plus one block. Parallel paths split work into
independent units and merge results in a fixed order, so output is identical
for 1 and N worker threads.
"""
from __future__ import annotations

import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .errors import StageError
from .types import EmbeddingStore, ImageRecord, Manifest

DEFAULT_BLOCK_ROWS = 1024

_T = TypeVar("_T")
_R = TypeVar("_R")


def deterministic_map(
    func: Callable[[_T], _R], items: Sequence[_T], workers: int = 1
) -> list[_R]:
    """Apply ``func`` to items, optionally on a thread pool.

    Results come back in input order regardless of scheduling, which is what
    makes every parallel path in this package thread-count invariant.
    """
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two unit vectors: their dot product, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise StageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(min(1.0, max(-1.0, float(np.dot(a, b)))))


def block_scores(rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Clamped float64 score matrix between two row-stacks of unit vectors."""
    scores = rows.astype(np.float64, copy=False) @ cols.astype(np.float64, copy=False).T
    np.clip(scores, -1.0, 1.0, out=scores)
    return scores


@dataclass(frozen=True)
class SimilarityBlock:
    """Pairwise score matrix between two lists of images."""

    row_ids: tuple[str, ...]
    col_ids: tuple[str, ...]
    scores: np.ndarray


def similarity_block(
    manifest: Manifest,
    store: EmbeddingStore,
    row_ids: Sequence[str],
    col_ids: Sequence[str] | None = None,
    block_rows: int = DEFAULT_BLOCK_ROWS,
) -> SimilarityBlock:
    if col_ids is None:
        col_ids = row_ids
    index_of = {rec.image_id: rec.embedding_index for rec in manifest.records}
    try:
        row_idx = np.asarray([index_of[i] for i in row_ids], dtype=np.intp)
        col_idx = np.asarray([index_of[i] for i in col_ids], dtype=np.intp)
    except KeyError as exc:
        raise StageError(f"unknown image_id {exc.args[0]!r}") from None
    cols = store.vectors[col_idx]
    out = np.empty((len(row_ids), len(col_ids)), dtype=np.float64)
    for start in range(0, len(row_ids), block_rows):
        stop = min(start + block_rows, len(row_ids))
        out[start:stop] = block_scores(store.vectors[row_idx[start:stop]], cols)
    return SimilarityBlock(row_ids=tuple(row_ids), col_ids=tuple(col_ids), scores=out)


@dataclass(frozen=True)
class MeanSimilarityRanking:
    """Per-image mean similarity within one subject, best first.

    ``entries`` is sorted by mean descending, ties broken by image_id
    ascending. ``gaps[k]`` is the drop from entries[k] to entries[k+1]; the
    biggest such drop is the natural cut between correctly labeled images and
    outliers.
    """

    subject_id: str
    entries: tuple[tuple[str, float], ...]
    gaps: tuple[tuple[int, float], ...]


def mean_similarity_ranking(
    records: Sequence[ImageRecord],
    store: EmbeddingStore,
    block_rows: int = DEFAULT_BLOCK_ROWS,
) -> MeanSimilarityRanking:
    """Rank a subject's images by mean similarity to their peers."""
    m = len(records)
    if m < 2:
        raise StageError(
            f"mean_similarity_ranking needs >= 2 records, got {m}"
        )
    subject_id = records[0].subject_id
    # Canonical id order makes the float accumulation, and therefore the
    # ranking, invariant under permutations of the caller's record order.
    records = sorted(records, key=lambda rec: rec.image_id)
    idx = np.asarray([rec.embedding_index for rec in records], dtype=np.intp)
    vectors = store.vectors[idx].astype(np.float64)
    sums = np.empty(m, dtype=np.float64)
    for start in range(0, m, block_rows):
        stop = min(start + block_rows, m)
        sums[start:stop] = block_scores(vectors[start:stop], vectors).sum(axis=1)
    self_sim = np.clip(np.einsum("ij,ij->i", vectors, vectors), -1.0, 1.0)
    means = (sums - self_sim) / (m - 1)
    entries = sorted(
        zip((rec.image_id for rec in records), means.tolist()),
        key=lambda item: (-item[1], item[0]),
    )
    gaps = tuple(
        (k, entries[k][1] - entries[k + 1][1]) for k in range(m - 1)
    )
    return MeanSimilarityRanking(
        subject_id=subject_id,
        entries=tuple(entries),
        gaps=gaps,
    )


def sample_representatives(
    manifest: Manifest, reps: int = 5, seed: int = 0
) -> dict[str, tuple[str, ...]]:
    """Pick up to ``reps`` representative image_ids per subject.

    The draw is a seeded sample without replacement over the subject's
    image_ids in sorted order, re-seeded per subject, so the choice is
    reproducible and independent of manifest record order.
    """
    if reps < 1:
        raise StageError(f"reps must be >= 1, got {reps}")
    chosen: dict[str, tuple[str, ...]] = {}
    for subject in sorted(manifest.subjects):
        ids = sorted(
            manifest.records[pos].image_id for pos in manifest.subjects[subject]
        )
        if len(ids) <= reps:
            chosen[subject] = tuple(ids)
        else:
            rng = random.Random(f"{seed}|reps|{subject}")
            chosen[subject] = tuple(rng.sample(ids, reps))
    return chosen


def cross_subject_means(
    manifest: Manifest,
    store: EmbeddingStore,
    reps: int = 5,
    seed: int = 0,
    block_rows: int = DEFAULT_BLOCK_ROWS,
    workers: int = 1,
) -> list[tuple[str, str, float]]:
    """Mean representative-pair similarity for every unordered subject pair.

    Each subject is represented by its sampled images (all of them when it
    has fewer than ``reps``); the pair score is the mean cosine over the full
    rep-by-rep cross product. Output is sorted by mean descending, ties by
    (subject_a, subject_b) ascending.
    """
    if manifest.image_count == 0:
        raise StageError("cross_subject_means requires a nonempty manifest")
    chosen = sample_representatives(manifest, reps=reps, seed=seed)
    subjects = sorted(chosen)
    n_subjects = len(subjects)
    if n_subjects < 2:
        return []

    index_of = {rec.image_id: rec.embedding_index for rec in manifest.records}
    rep_idx: list[int] = []
    seg_starts: list[int] = []
    counts = np.empty(n_subjects, dtype=np.float64)
    for s, subject in enumerate(subjects):
        seg_starts.append(len(rep_idx))
        ids = chosen[subject]
        counts[s] = len(ids)
        rep_idx.extend(index_of[i] for i in ids)
    seg_starts_arr = np.asarray(seg_starts, dtype=np.intp)
    rep_vectors = store.vectors[np.asarray(rep_idx, dtype=np.intp)].astype(np.float64)

    # Blocks are whole subjects so row-sums can reduce over subject segments.
    blocks: list[tuple[int, int]] = []
    start = 0
    while start < n_subjects:
        stop = start
        rows = 0
        while stop < n_subjects and rows < block_rows:
            rows += int(counts[stop])
            stop += 1
        blocks.append((start, stop))
        start = stop

    pair_sums = np.empty((n_subjects, n_subjects), dtype=np.float64)

    def run_block(block: tuple[int, int]) -> tuple[int, int, np.ndarray]:
        lo, hi = block
        row_lo = int(seg_starts_arr[lo])
        row_hi = int(seg_starts_arr[hi]) if hi < n_subjects else rep_vectors.shape[0]
        scores = block_scores(rep_vectors[row_lo:row_hi], rep_vectors)
        col_sums = np.add.reduceat(scores, seg_starts_arr, axis=1)
        local_starts = seg_starts_arr[lo:hi] - row_lo
        row_sums = np.add.reduceat(col_sums, local_starts, axis=0)
        return lo, hi, row_sums

    for lo, hi, row_sums in deterministic_map(run_block, blocks, workers=workers):
        pair_sums[lo:hi, :] = row_sums

    upper_a, upper_b = np.triu_indices(n_subjects, k=1)
    means = pair_sums[upper_a, upper_b] / (counts[upper_a] * counts[upper_b])
    order = np.lexsort((upper_b, upper_a, -means))
    return [
        (subjects[upper_a[i]], subjects[upper_b[i]], float(means[i]))
        for i in order
    ]
