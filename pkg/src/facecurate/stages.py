"""The four curation transformations, each (Manifest, store) -> (Manifest, report).

Stage order is pose -> mislabel -> merge candidates -> apply merges ->
near-duplicate; reports chain so stage k's images_before equals stage k-1's
images_after. Every stage's surviving records are a subset of its input in
the original order (apply_merges relabels but never adds or removes).

Subjects are independent units for pose, mislabel, and near-duplicate
cleaning, so they can be processed on worker threads; results merge in
subject-id order and are identical for any thread count.
"""
from __future__ import annotations

import dataclasses
import logging

import numpy as np

from .errors import StageError
from .filters import REASON_BELOW_MIN, split_min_images
from .simkit import (
    block_scores,
    cross_subject_means,
    deterministic_map,
    mean_similarity_ranking,
)
from .types import (
    EmbeddingStore,
    ImageRecord,
    Manifest,
    MergeCandidate,
    PoseLimits,
    StageReport,
)

logger = logging.getLogger(__name__)

REASON_POSE = "pose"
REASON_MISLABELED = "mislabeled"
REASON_SINGLETON = "singleton"
REASON_NEAR_DUPLICATE = "near_duplicate"


def _report(
    stage_name: str,
    before: Manifest,
    after: Manifest,
    removed: list[tuple[str, str]],
    merged: list[tuple[str, str]] | None = None,
) -> StageReport:
    return StageReport(
        stage_name=stage_name,
        images_before=before.image_count,
        images_after=after.image_count,
        subjects_before=before.subject_count,
        subjects_after=after.subject_count,
        removed_images=tuple(removed),
        merged_subjects=tuple(merged or ()),
    )


def pose_filter(
    manifest: Manifest,
    limits: PoseLimits = PoseLimits(),
    min_images: int = 10,
) -> tuple[Manifest, StageReport]:
    """Remove images whose |roll|, |pitch| or |yaw| exceeds its limit.

    The gate is strict: an angle of exactly 15 degrees survives a 15-degree
    limit. Subjects left with fewer than ``min_images`` records are then
    dropped entirely.
    """
    removed: list[tuple[str, str]] = []
    kept: list[ImageRecord] = []
    for rec in manifest.records:
        if limits.allows(rec):
            kept.append(rec)
        else:
            removed.append((rec.image_id, REASON_POSE))
    intermediate = manifest.with_records(kept)
    result, min_removed = _apply_min_images(intermediate, min_images)
    removed.extend(min_removed)
    return result, _report("pose", manifest, result, removed)


def _apply_min_images(
    manifest: Manifest, min_images: int
) -> tuple[Manifest, list[tuple[str, str]]]:
    kept, removed = split_min_images(manifest, min_images)
    return manifest.with_records(kept), removed


def biggest_gap_cut(gaps: list[tuple[int, float]] | tuple, min_gap: float) -> int | None:
    """Position of the biggest ranking gap, or None when no gap exceeds min_gap.

    Ties go to the latest position (the conservative cut that removes the
    fewest images). Entries strictly below the returned position + 1 boundary
    are the removal suffix.
    """
    best_pos: int | None = None
    best_delta = min_gap
    for pos, delta in gaps:
        if delta > best_delta or (best_pos is not None and delta == best_delta):
            best_pos = pos
            best_delta = delta
    return best_pos


def mislabel_clean(
    manifest: Manifest,
    store: EmbeddingStore,
    min_gap: float = 0.0,
    workers: int = 1,
) -> tuple[Manifest, StageReport]:
    """Cut each subject's mean-similarity ranking at its biggest gap.

    Images below the cut score like strangers to the rest of the subject and
    are removed as mislabeled. Subjects with <= 2 images are exempt from the
    gap rule (a 2-image subject would always lose one image). Afterwards any
    subject reduced to a single image is dropped: it can contribute no
    authentic pairs.
    """
    subjects = sorted(manifest.subjects)

    def cut_subject(subject: str) -> list[str]:
        positions = manifest.subjects[subject]
        if len(positions) <= 2:
            return []
        ranking = mean_similarity_ranking(
            [manifest.records[p] for p in positions], store
        )
        pos = biggest_gap_cut(ranking.gaps, min_gap)
        if pos is None:
            return []
        return [image_id for image_id, _ in ranking.entries[pos + 1:]]

    removals_per_subject = deterministic_map(cut_subject, subjects, workers=workers)
    mislabeled = set()
    for ids in removals_per_subject:
        mislabeled.update(ids)

    removed: list[tuple[str, str]] = []
    kept: list[ImageRecord] = []
    for rec in manifest.records:
        if rec.image_id in mislabeled:
            removed.append((rec.image_id, REASON_MISLABELED))
        else:
            kept.append(rec)
    intermediate = manifest.with_records(kept)

    singles = {s for s, pos in intermediate.subjects.items() if len(pos) == 1}
    survivors: list[ImageRecord] = []
    for rec in intermediate.records:
        if rec.subject_id in singles:
            removed.append((rec.image_id, REASON_SINGLETON))
        else:
            survivors.append(rec)
    result = intermediate.with_records(survivors)
    return result, _report("mislabel", manifest, result, removed)


def generate_merge_candidates(
    manifest: Manifest,
    store: EmbeddingStore,
    threshold: float = 0.25,
    reps: int = 5,
    seed: int = 0,
    workers: int = 1,
) -> list[MergeCandidate]:
    """Emit a pending candidate for every subject pair scoring above threshold.

    Pairs at or below the threshold are considered different people and never
    surface. Output is sorted by mean score descending.
    """
    candidates = []
    for subject_a, subject_b, mean_score in cross_subject_means(
        manifest, store, reps=reps, seed=seed, workers=workers
    ):
        if mean_score > threshold:
            candidates.append(
                MergeCandidate(
                    subject_a=subject_a, subject_b=subject_b, mean_score=mean_score
                )
            )
    return candidates


class _UnionFind:
    def __init__(self) -> None:
        self.parent: dict[str, str] = {}

    def add(self, item: str) -> None:
        self.parent.setdefault(item, item)

    def find(self, item: str) -> str:
        root = item
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[item] != root:
            self.parent[item], item = root, self.parent[item]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        # Lexicographically smallest id wins so the survivor is deterministic.
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra


def apply_merges(
    manifest: Manifest, decisions: list[MergeCandidate]
) -> tuple[Manifest, StageReport]:
    """Relabel same-person subject groups to one canonical subject id.

    Every decision must be resolved; same_person pairs are closed
    transitively and each connected component keeps its lexicographically
    smallest subject_id. No records are added or removed.
    """
    pending = [c.pair for c in decisions if c.decision == "pending"]
    if pending:
        raise StageError(f"{len(pending)} candidate(s) still pending: {pending[:5]}")
    unknown = sorted(
        {
            subject
            for c in decisions
            for subject in c.pair
            if subject not in manifest.subjects
        }
    )
    if unknown:
        raise StageError(f"decisions reference unknown subject_id(s): {unknown[:10]}")

    uf = _UnionFind()
    for cand in decisions:
        uf.add(cand.subject_a)
        uf.add(cand.subject_b)
        if cand.decision == "same_person":
            uf.union(cand.subject_a, cand.subject_b)
    for cand in decisions:
        if cand.decision == "different_person":
            if uf.find(cand.subject_a) == uf.find(cand.subject_b):
                raise StageError(
                    f"contradictory decisions: {cand.subject_a!r} and "
                    f"{cand.subject_b!r} are marked different_person but are "
                    f"connected through same_person pairs"
                )

    relabel = {
        subject: uf.find(subject)
        for subject in uf.parent
        if uf.find(subject) != subject
    }
    merged = sorted(relabel.items())

    records = tuple(
        rec
        if rec.subject_id not in relabel
        else dataclasses.replace(rec, subject_id=relabel[rec.subject_id])
        for rec in manifest.records
    )

    labels = dict(manifest.gender_labels)
    for absorbed, survivor in merged:
        absorbed_label = labels.pop(absorbed, None)
        if absorbed_label is None:
            continue
        survivor_label = labels.get(survivor)
        if survivor_label is None:
            labels[survivor] = absorbed_label
        elif survivor_label != absorbed_label:
            # Conflicting labels across a merged identity go back to a human.
            labels[survivor] = "needs_review"

    result = Manifest.from_records(records, gender_labels=labels)
    return result, _report("merge", manifest, result, [], merged)


def near_duplicate_clean(
    manifest: Manifest,
    store: EmbeddingStore,
    threshold: float = 0.91,
    min_images: int = 10,
    workers: int = 1,
) -> tuple[Manifest, StageReport]:
    """Greedy pivot sweep deleting near-duplicate images within each subject.

    Images are visited in image_id ascending order; each surviving image in
    turn becomes the pivot and every later survivor scoring at or above the
    threshold against it is deleted. No surviving pair can score >= threshold
    afterwards, which also makes the sweep idempotent. Subjects falling below
    ``min_images`` are then dropped.
    """
    subjects = sorted(manifest.subjects)

    def sweep_subject(subject: str) -> list[str]:
        positions = manifest.subjects[subject]
        if len(positions) < 2:
            return []
        recs = sorted(
            (manifest.records[p] for p in positions), key=lambda r: r.image_id
        )
        idx = np.asarray([r.embedding_index for r in recs], dtype=np.intp)
        vectors = store.vectors[idx].astype(np.float64)
        m = len(recs)
        alive = np.ones(m, dtype=bool)
        for i in range(m - 1):
            if not alive[i]:
                continue
            tail = vectors[i + 1:] @ vectors[i]
            np.clip(tail, -1.0, 1.0, out=tail)
            alive[i + 1:] &= tail < threshold
        return [recs[i].image_id for i in range(m) if not alive[i]]

    removals_per_subject = deterministic_map(sweep_subject, subjects, workers=workers)
    duplicates = set()
    for ids in removals_per_subject:
        duplicates.update(ids)

    removed: list[tuple[str, str]] = []
    kept: list[ImageRecord] = []
    for rec in manifest.records:
        if rec.image_id in duplicates:
            removed.append((rec.image_id, REASON_NEAR_DUPLICATE))
        else:
            kept.append(rec)
    intermediate = manifest.with_records(kept)
    result, min_removed = _apply_min_images(intermediate, min_images)
    removed.extend(min_removed)
    return result, _report("near_duplicate", manifest, result, removed)
