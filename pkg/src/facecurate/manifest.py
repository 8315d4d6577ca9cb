"""Manifest and gender-sidecar file I/O.

The manifest is a UTF-8, comma-separated, header-required text file so the
curation audit trail stays trivially inspectable and diffable. Canonical form:
columns in MANIFEST_COLUMNS order, shortest round-trip float spelling, "\n"
line endings.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable

from .errors import ManifestError
from .types import GENDER_LABELS, GENDER_VOTES, ImageRecord, Manifest

MANIFEST_COLUMNS = (
    "image_id",
    "subject_id",
    "embedding_index",
    "roll",
    "pitch",
    "yaw",
    "gender_vote",
    "source_path",
)

SIDECAR_COLUMNS = ("subject_id", "label")


def _format_angle(value: float) -> str:
    return repr(float(value))


def _parse_row(row: dict[str, str], line_no: int) -> ImageRecord:
    def fail(msg: str) -> ManifestError:
        return ManifestError(f"manifest line {line_no}: {msg}")

    image_id = row.get("image_id") or ""
    subject_id = row.get("subject_id") or ""
    if not image_id:
        raise fail("empty image_id")
    if not subject_id:
        raise fail("empty subject_id")
    try:
        embedding_index = int(row["embedding_index"])
    except (KeyError, ValueError):
        raise fail(f"bad embedding_index {row.get('embedding_index')!r}") from None
    if embedding_index < 0:
        raise fail(f"negative embedding_index {embedding_index}")
    angles = {}
    for name in ("roll", "pitch", "yaw"):
        try:
            angles[name] = float(row[name])
        except (KeyError, ValueError):
            raise fail(f"bad {name} value {row.get(name)!r}") from None
    vote = row.get("gender_vote") or "unknown"
    if vote not in GENDER_VOTES:
        raise fail(f"gender_vote must be one of {GENDER_VOTES}, got {vote!r}")
    return ImageRecord(
        image_id=image_id,
        subject_id=subject_id,
        embedding_index=embedding_index,
        roll=angles["roll"],
        pitch=angles["pitch"],
        yaw=angles["yaw"],
        gender_vote=vote,
        source_path=row.get("source_path") or "",
    )


def _read_rows(text: str) -> list[ImageRecord]:
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError("manifest is empty (missing header)") from None
    missing = [c for c in MANIFEST_COLUMNS if c not in header]
    if missing:
        raise ManifestError(f"manifest header is missing columns: {missing}")
    records = []
    seen: dict[str, int] = {}
    for line_no, raw in enumerate(reader, start=2):
        if not raw:
            continue
        if len(raw) != len(header):
            raise ManifestError(
                f"manifest line {line_no}: expected {len(header)} fields, got {len(raw)}"
            )
        record = _parse_row(dict(zip(header, raw)), line_no)
        if record.image_id in seen:
            raise ManifestError(
                f"manifest line {line_no}: duplicate image_id "
                f"{record.image_id!r} (first seen on line {seen[record.image_id]})"
            )
        seen[record.image_id] = line_no
        records.append(record)
    return records


def load_manifest(path: str | Path) -> Manifest:
    """Load a manifest CSV; record order equals file order."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    return Manifest.from_records(_read_rows(text))


def _record_row(record: ImageRecord) -> list[str]:
    return [
        record.image_id,
        record.subject_id,
        str(record.embedding_index),
        _format_angle(record.roll),
        _format_angle(record.pitch),
        _format_angle(record.yaw),
        record.gender_vote,
        record.source_path,
    ]


def manifest_to_text(manifest: Manifest) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for record in manifest.records:
        writer.writerow(_record_row(record))
    return out.getvalue()


def write_manifest(manifest: Manifest, path: str | Path) -> None:
    Path(path).write_text(manifest_to_text(manifest), encoding="utf-8")


def canonicalize_manifest_text(text: str) -> str:
    """Rewrite manifest text in canonical form without building a Manifest.

    Canonical column order, canonical float spelling, unknown gender for
    missing votes, "\n" line endings. Row order is preserved as-is.
    """
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError("manifest is empty (missing header)") from None
    missing = [c for c in MANIFEST_COLUMNS if c not in header]
    if missing:
        raise ManifestError(f"manifest header is missing columns: {missing}")
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(MANIFEST_COLUMNS)
    for raw in reader:
        if not raw:
            continue
        row = dict(zip(header, raw))
        writer.writerow(
            [
                row["image_id"],
                row["subject_id"],
                str(int(row["embedding_index"])),
                _format_angle(float(row["roll"])),
                _format_angle(float(row["pitch"])),
                _format_angle(float(row["yaw"])),
                row.get("gender_vote") or "unknown",
                row.get("source_path") or "",
            ]
        )
    return out.getvalue()


def write_gender_sidecar(labels: dict[str, str], path: str | Path) -> None:
    """Write subject gender labels, sorted by subject_id."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(SIDECAR_COLUMNS)
    for subject in sorted(labels):
        writer.writerow([subject, labels[subject]])
    Path(path).write_text(out.getvalue(), encoding="utf-8")


def load_gender_sidecar(path: str | Path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read gender sidecar {path}: {exc}") from exc
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError("gender sidecar is empty (missing header)") from None
    if header != list(SIDECAR_COLUMNS):
        raise ManifestError(
            f"gender sidecar header must be {list(SIDECAR_COLUMNS)}, got {header}"
        )
    labels: dict[str, str] = {}
    for line_no, raw in enumerate(reader, start=2):
        if not raw:
            continue
        if len(raw) != 2:
            raise ManifestError(f"gender sidecar line {line_no}: expected 2 fields")
        subject, label = raw
        if label not in GENDER_LABELS:
            raise ManifestError(
                f"gender sidecar line {line_no}: label must be one of "
                f"{GENDER_LABELS}, got {label!r}"
            )
        labels[subject] = label
    return labels


def validate_against_store(manifest: Manifest, store_count: int) -> None:
    """Check every record's embedding_index is in range for the store."""
    bad = [
        rec.image_id
        for rec in manifest.records
        if rec.embedding_index >= store_count
    ]
    if bad:
        shown = ", ".join(repr(b) for b in bad[:10])
        more = "" if len(bad) <= 10 else f" and {len(bad) - 10} more"
        raise ManifestError(
            f"{len(bad)} record(s) have embedding_index out of range for a "
            f"store of {store_count} rows: {shown}{more}"
        )


def records_subset(manifest: Manifest, keep: Iterable[str]) -> Manifest:
    """Manifest restricted to the given image_ids, original order preserved."""
    keep_set = set(keep)
    return manifest.with_records(
        rec for rec in manifest.records if rec.image_id in keep_set
    )
