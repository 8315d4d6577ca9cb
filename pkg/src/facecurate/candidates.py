"""Candidate and decision files: JSON-lines, one MergeCandidate per line.

The candidate file is written once, sorted by mean score descending. The
decision file uses the same shape with the decision filled in; it is append-
only so a crashed review session loses nothing, and the last line for a pair
wins on replay.
"""
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Iterable, Sequence

from .errors import StageError
from .types import MergeCandidate


def write_candidates(candidates: Sequence[MergeCandidate], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cand in candidates:
            fh.write(json.dumps(cand.to_json()) + "\n")


def read_candidates(path: str | Path) -> list[MergeCandidate]:
    candidates = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                candidates.append(MergeCandidate.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as exc:
                raise StageError(f"{path} line {line_no}: bad candidate: {exc}") from exc
    return candidates


def append_decision(candidate: MergeCandidate, path: str | Path) -> None:
    """Append one decided candidate, flushed and fsynced before returning."""
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(candidate.to_json()) + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def load_decisions(path: str | Path) -> dict[tuple[str, str], MergeCandidate]:
    """Replay a decision file; the last decision per pair wins."""
    decisions: dict[tuple[str, str], MergeCandidate] = {}
    for cand in read_candidates(path):
        decisions[cand.pair] = cand
    return decisions


def merge_decisions(
    candidates: Iterable[MergeCandidate],
    decisions: dict[tuple[str, str], MergeCandidate],
) -> list[MergeCandidate]:
    """Overlay decisions onto the candidate list, preserving candidate order."""
    merged = []
    for cand in candidates:
        decided = decisions.get(cand.pair)
        if decided is not None and decided.decision != "pending":
            merged.append(
                cand.decided(
                    decided.decision,
                    decided_by=decided.decided_by,
                    decided_at=decided.decided_at,
                )
            )
        else:
            merged.append(cand)
    return merged


def pending_pairs(candidates: Iterable[MergeCandidate]) -> list[tuple[str, str]]:
    return [cand.pair for cand in candidates if cand.decision == "pending"]
