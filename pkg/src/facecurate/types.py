"""Domain types shared by every stage of the curation pipeline.

All types are immutable after construction and safe to share across threads
for reading. Stages never mutate a manifest in place; they return new ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmbeddingFormatError, ManifestError

GENDER_VOTES = ("male", "female", "unknown")
GENDER_LABELS = ("male", "female", "needs_review")
DECISIONS = ("pending", "same_person", "different_person")

#: Maximum deviation of an embedding row norm from 1.0.
NORM_TOLERANCE = 1e-3


@dataclass(frozen=True, slots=True)
class ImageRecord:
    """One image of one subject, with pose metadata and an embedding row."""

    image_id: str
    subject_id: str
    embedding_index: int
    roll: float
    pitch: float
    yaw: float
    gender_vote: str = "unknown"
    source_path: str = ""

    def __post_init__(self) -> None:
        if self.embedding_index < 0:
            raise ManifestError(
                f"record {self.image_id!r}: embedding_index must be nonnegative, "
                f"got {self.embedding_index}"
            )
        if self.gender_vote not in GENDER_VOTES:
            raise ManifestError(
                f"record {self.image_id!r}: gender_vote must be one of "
                f"{GENDER_VOTES}, got {self.gender_vote!r}"
            )


@dataclass(frozen=True)
class Manifest:
    """Ordered collection of image records plus a subject index.

    Record order is the on-disk order; every stage preserves the relative
    order of surviving records. ``subjects`` maps subject_id to the positions
    of that subject's records and is always derivable from ``records``.
    """

    records: tuple[ImageRecord, ...]
    subjects: Mapping[str, tuple[int, ...]]
    gender_labels: Mapping[str, str] = field(default_factory=dict)

    @classmethod
    def from_records(
        cls,
        records: Iterable[ImageRecord],
        gender_labels: Mapping[str, str] | None = None,
    ) -> "Manifest":
        recs = tuple(records)
        seen: set[str] = set()
        for rec in recs:
            if rec.image_id in seen:
                raise ManifestError(f"duplicate image_id {rec.image_id!r}")
            seen.add(rec.image_id)
        labels = dict(gender_labels or {})
        for subject, label in labels.items():
            if label not in GENDER_LABELS:
                raise ManifestError(
                    f"subject {subject!r}: gender label must be one of "
                    f"{GENDER_LABELS}, got {label!r}"
                )
        return cls(records=recs, subjects=_build_index(recs), gender_labels=labels)

    def with_records(self, records: Iterable[ImageRecord]) -> "Manifest":
        """New manifest with the given records; gender labels are kept for
        subjects that still exist."""
        recs = tuple(records)
        index = _build_index(recs)
        labels = {s: l for s, l in self.gender_labels.items() if s in index}
        return Manifest(records=recs, subjects=index, gender_labels=labels)

    def with_gender_labels(self, labels: Mapping[str, str]) -> "Manifest":
        return Manifest.from_records(self.records, gender_labels=labels)

    def subject_records(self, subject_id: str) -> tuple[ImageRecord, ...]:
        return tuple(self.records[i] for i in self.subjects[subject_id])

    @property
    def image_count(self) -> int:
        return len(self.records)

    @property
    def subject_count(self) -> int:
        return len(self.subjects)

    def rebuild_index(self) -> Mapping[str, tuple[int, ...]]:
        return _build_index(self.records)

    def check_index(self) -> None:
        """Raise if the stored subject index is out of sync with records."""
        if dict(self.subjects) != dict(self.rebuild_index()):
            raise ManifestError("subject index is inconsistent with records")


def _build_index(records: Sequence[ImageRecord]) -> dict[str, tuple[int, ...]]:
    by_subject: dict[str, list[int]] = {}
    for pos, rec in enumerate(records):
        by_subject.setdefault(rec.subject_id, []).append(pos)
    return {s: tuple(p) for s, p in by_subject.items()}


@dataclass(frozen=True)
class EmbeddingStore:
    """Dense matrix of unit-length float32 feature vectors, row-addressed.

    Rows are required to arrive pre-normalized (norm within 1 ± 1e-3);
    renormalizing on load would mask producer bugs, and every similarity
    threshold downstream presupposes cosine scores from unit vectors.
    """

    vectors: np.ndarray

    def __post_init__(self) -> None:
        vecs = self.vectors
        if vecs.ndim != 2:
            raise EmbeddingFormatError(f"expected 2-D matrix, got shape {vecs.shape}")
        if vecs.dtype != np.float32:
            raise EmbeddingFormatError(f"expected float32 vectors, got {vecs.dtype}")
        check_unit_norms(vecs)

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def row(self, index: int) -> np.ndarray:
        return self.vectors[index]

    def rows(self, indices: Sequence[int]) -> np.ndarray:
        return self.vectors[np.asarray(indices, dtype=np.intp)]


def check_unit_norms(vectors: np.ndarray, tolerance: float = NORM_TOLERANCE) -> None:
    """Raise EmbeddingFormatError listing every row whose norm is off-unit."""
    if vectors.shape[0] == 0:
        return
    norms = np.linalg.norm(vectors.astype(np.float64, copy=False), axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > tolerance)
    if bad.size:
        shown = ", ".join(
            f"{int(i)} (norm {norms[i]:.6f})" for i in bad[:10]
        )
        more = "" if bad.size <= 10 else f" and {bad.size - 10} more"
        raise EmbeddingFormatError(
            f"{bad.size} embedding row(s) are not unit length: {shown}{more}"
        )


@dataclass(frozen=True)
class StageReport:
    """Removal and merge accounting for one curation stage."""

    stage_name: str
    images_before: int
    images_after: int
    subjects_before: int
    subjects_after: int
    removed_images: tuple[tuple[str, str], ...] = ()
    merged_subjects: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if self.images_after != self.images_before - len(self.removed_images):
            raise ManifestError(
                f"stage {self.stage_name!r}: images_after "
                f"({self.images_after}) != images_before "
                f"({self.images_before}) - removed ({len(self.removed_images)})"
            )
        if self.subjects_after > self.subjects_before:
            raise ManifestError(
                f"stage {self.stage_name!r}: subjects_after "
                f"({self.subjects_after}) > subjects_before ({self.subjects_before})"
            )

    def to_json(self) -> dict:
        return {
            "stage_name": self.stage_name,
            "images_before": self.images_before,
            "images_after": self.images_after,
            "subjects_before": self.subjects_before,
            "subjects_after": self.subjects_after,
            "removed_images": [list(item) for item in self.removed_images],
            "merged_subjects": [list(item) for item in self.merged_subjects],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "StageReport":
        return cls(
            stage_name=data["stage_name"],
            images_before=data["images_before"],
            images_after=data["images_after"],
            subjects_before=data["subjects_before"],
            subjects_after=data["subjects_after"],
            removed_images=tuple((i, r) for i, r in data["removed_images"]),
            merged_subjects=tuple((a, s) for a, s in data["merged_subjects"]),
        )


@dataclass(frozen=True)
class PoseLimits:
    """Absolute pose-angle gates in degrees; images beyond any gate are cut."""

    max_abs_roll: float = 15.0
    max_abs_pitch: float = 15.0
    max_abs_yaw: float = 15.0

    def __post_init__(self) -> None:
        for name in ("max_abs_roll", "max_abs_pitch", "max_abs_yaw"):
            if getattr(self, name) <= 0:
                raise ManifestError(f"pose limit {name} must be > 0")

    def allows(self, record: ImageRecord) -> bool:
        return (
            abs(record.roll) <= self.max_abs_roll
            and abs(record.pitch) <= self.max_abs_pitch
            and abs(record.yaw) <= self.max_abs_yaw
        )


@dataclass(frozen=True)
class MergeCandidate:
    """A pair of subject labels suspected to be the same person.

    The pair is canonical: subject_a < subject_b lexicographically.
    """

    subject_a: str
    subject_b: str
    mean_score: float
    decision: str = "pending"
    decided_by: str | None = None
    decided_at: str | None = None

    def __post_init__(self) -> None:
        if not self.subject_a < self.subject_b:
            raise ManifestError(
                f"candidate pair must be canonical (a < b), got "
                f"({self.subject_a!r}, {self.subject_b!r})"
            )
        if self.decision not in DECISIONS:
            raise ManifestError(
                f"decision must be one of {DECISIONS}, got {self.decision!r}"
            )

    @property
    def pair(self) -> tuple[str, str]:
        return (self.subject_a, self.subject_b)

    def decided(self, decision: str, decided_by: str | None = None,
                decided_at: str | None = None) -> "MergeCandidate":
        return MergeCandidate(
            subject_a=self.subject_a,
            subject_b=self.subject_b,
            mean_score=self.mean_score,
            decision=decision,
            decided_by=decided_by,
            decided_at=decided_at,
        )

    def to_json(self) -> dict:
        return {
            "subject_a": self.subject_a,
            "subject_b": self.subject_b,
            "mean_score": self.mean_score,
            "decision": self.decision,
            "decided_by": self.decided_by,
            "decided_at": self.decided_at,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "MergeCandidate":
        return cls(
            subject_a=data["subject_a"],
            subject_b=data["subject_b"],
            mean_score=float(data["mean_score"]),
            decision=data.get("decision", "pending"),
            decided_by=data.get("decided_by"),
            decided_at=data.get("decided_at"),
        )
