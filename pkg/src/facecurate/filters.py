"""Structural manifest filters shared by several curation stages."""
from __future__ import annotations

from .errors import StageError
from .types import ImageRecord, Manifest, StageReport

REASON_BELOW_MIN = "below_min_images"


def split_min_images(
    manifest: Manifest, min_images: int
) -> tuple[list[ImageRecord], list[tuple[str, str]]]:
    """Partition records into (kept, removed-with-reason) by subject size."""
    if min_images < 1:
        raise StageError(f"min_images must be >= 1, got {min_images}")
    small = {s for s, pos in manifest.subjects.items() if len(pos) < min_images}
    kept: list[ImageRecord] = []
    removed: list[tuple[str, str]] = []
    for rec in manifest.records:
        if rec.subject_id in small:
            removed.append((rec.image_id, REASON_BELOW_MIN))
        else:
            kept.append(rec)
    return kept, removed


def filter_min_images(manifest: Manifest, min_images: int = 10) -> tuple[Manifest, StageReport]:
    """Drop every subject that has fewer than ``min_images`` records."""
    kept, removed = split_min_images(manifest, min_images)
    result = manifest.with_records(kept)
    report = StageReport(
        stage_name="min_images",
        images_before=manifest.image_count,
        images_after=result.image_count,
        subjects_before=manifest.subject_count,
        subjects_after=result.subject_count,
        removed_images=tuple(removed),
    )
    return result, report
