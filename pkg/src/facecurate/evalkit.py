"""Verification-accuracy evaluation: score distributions, FMR thresholds, ROC.

Matching is >=-threshold with ties counted as matches, which never
understates the false match rate. The FMR budget comparison count/N <= fmr
is evaluated in exact rational arithmetic on the fmr float's exact value, so
no floor(fmr * N) rounding surprises leak into thresholds.

A threshold is always one of the observed impostor scores: the smallest
score whose >=-count stays within the budget. When even the top (tied) score
group overshoots the budget, no usable threshold exists and the result is
flagged "unsupported_fmr" with a threshold just above the maximum score.
"""
from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .embeddings import SCORES_MAGIC, read_vector_file, write_vector_file
from .errors import EvalError
from .simkit import block_scores, deterministic_map, DEFAULT_BLOCK_ROWS
from .types import EmbeddingStore, Manifest

logger = logging.getLogger(__name__)

UNSUPPORTED_FMR = "unsupported_fmr"


@dataclass(frozen=True)
class ScoreSet:
    """Authentic and impostor similarity scores for one demographic group."""

    group: str
    authentic: np.ndarray
    impostor: np.ndarray
    subsample_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0 < self.subsample_fraction <= 1:
            raise EvalError(
                f"subsample_fraction must be in (0, 1], got {self.subsample_fraction}"
            )
        for name in ("authentic", "impostor"):
            arr = np.asarray(getattr(self, name))
            object.__setattr__(self, name, arr)
            if arr.size and (arr.min() < -1.0 or arr.max() > 1.0):
                raise EvalError(f"{name} scores outside [-1, 1] for group {self.group!r}")


class ThresholdAtFmr(NamedTuple):
    threshold: float
    flag: str | None


class TprAtFmr(NamedTuple):
    tpr: float
    threshold: float
    flag: str | None


@dataclass(frozen=True)
class RocCurve:
    """Operating points (fmr, tpr, threshold) sorted by fmr ascending."""

    points: tuple[tuple[float, float, float], ...]

    def __post_init__(self) -> None:
        prev_fmr, prev_tpr = -1.0, -1.0
        for fmr, tpr, _ in self.points:
            if not (0.0 <= fmr <= 1.0 and 0.0 <= tpr <= 1.0):
                raise EvalError(f"ROC point out of range: fmr={fmr}, tpr={tpr}")
            if fmr < prev_fmr or (fmr >= prev_fmr and tpr < prev_tpr):
                raise EvalError("ROC points must be monotone in fmr and tpr")
            prev_fmr, prev_tpr = fmr, tpr


def _match_budget(fmr: float, n: int) -> int:
    """Largest match count whose rate stays at or below fmr, computed exactly."""
    return int(Fraction(fmr) * n)


def _observed_threshold(sorted_scores: np.ndarray, budget: int) -> ThresholdAtFmr:
    """Smallest observed score whose >=-count is within the budget.

    ``sorted_scores`` must be ascending. Returns the float successor of the
    maximum score, flagged, when no observed score fits the budget.
    """
    n = sorted_scores.size
    if budget >= n:
        return ThresholdAtFmr(float(sorted_scores[0]), None)
    if budget > 0:
        value = sorted_scores[n - budget]
        left = int(np.searchsorted(sorted_scores, value, side="left"))
        if left >= n - budget:
            return ThresholdAtFmr(float(value), None)
        right = int(np.searchsorted(sorted_scores, value, side="right"))
        if right < n:
            return ThresholdAtFmr(float(sorted_scores[right]), None)
    # The successor is taken in the scores' own dtype so comparisons against
    # the score arrays stay exact under any promotion rules.
    top = np.nextafter(sorted_scores[-1:], np.inf)[0]
    return ThresholdAtFmr(float(top), UNSUPPORTED_FMR)


def _as_scores(values: Sequence[float] | np.ndarray, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.size == 0:
        raise EvalError(f"{name} score list is empty")
    return arr


def threshold_at_fmr(
    impostor: Sequence[float] | np.ndarray, fmr: float
) -> ThresholdAtFmr:
    """Smallest observed impostor score t with count(impostor >= t)/N <= fmr."""
    if not 0 < fmr < 1:
        raise EvalError(f"fmr must be in (0, 1), got {fmr}")
    scores = np.sort(_as_scores(impostor, "impostor"))
    return _observed_threshold(scores, _match_budget(fmr, scores.size))


def tpr_at_fmr(scores: ScoreSet, fmr: float) -> TprAtFmr:
    """True positive rate at the threshold fixing the impostor match rate."""
    authentic = _as_scores(scores.authentic, "authentic")
    threshold, flag = threshold_at_fmr(scores.impostor, fmr)
    tpr = int(np.count_nonzero(authentic >= threshold)) / authentic.size
    return TprAtFmr(tpr, threshold, flag)


def roc_curve(scores: ScoreSet, points: int = 200) -> RocCurve:
    """ROC swept over observed impostor scores at log-spaced FMR targets.

    Every emitted point is recomputed at its threshold, so (fmr, tpr) pairs
    are internally consistent rather than interpolated.
    """
    if points < 1:
        raise EvalError(f"points must be >= 1, got {points}")
    impostor = np.sort(_as_scores(scores.impostor, "impostor"))
    authentic = np.sort(_as_scores(scores.authentic, "authentic"))
    return _roc_from_sorted(impostor, authentic, points)


def _roc_from_sorted(
    impostor: np.ndarray, authentic: np.ndarray, points: int
) -> RocCurve:
    n = impostor.size
    budgets = np.unique(
        np.rint(np.geomspace(1, n, num=min(points, n))).astype(int)
    )
    out: list[tuple[float, float, float]] = []
    last_threshold: float | None = None
    for budget in [0, *budgets.tolist()]:
        threshold, _ = _observed_threshold(impostor, budget)
        if threshold == last_threshold:
            continue
        last_threshold = threshold
        fmr = (n - int(np.searchsorted(impostor, threshold, side="left"))) / n
        tpr = (
            authentic.size - int(np.searchsorted(authentic, threshold, side="left"))
        ) / authentic.size
        out.append((fmr, tpr, threshold))
    return RocCurve(points=tuple(out))


def histogram(
    scores: Sequence[float] | np.ndarray,
    bins: int = 100,
    value_range: tuple[float, float] = (-1.0, 1.0),
) -> list[tuple[float, float]]:
    """Normalized density histogram; out-of-range scores clamp to edge bins.

    Bin boundaries follow the boundary-goes-right convention (a score exactly
    on an interior edge lands in the bin above it); densities integrate to 1.
    """
    if bins < 1:
        raise EvalError(f"bins must be >= 1, got {bins}")
    arr = _as_scores(scores, "histogram")
    lo, hi = value_range
    if not lo < hi:
        raise EvalError(f"bad histogram range {value_range}")
    counts, edges = np.histogram(np.clip(arr, lo, hi), bins=bins, range=(lo, hi))
    width = (hi - lo) / bins
    density = counts / (arr.size * width)
    centers = (edges[:-1] + edges[1:]) / 2.0
    return list(zip(centers.tolist(), density.tolist()))


def build_score_sets(
    manifest: Manifest,
    store: EmbeddingStore,
    groups: Mapping[str, str],
    fraction: float = 1.0 / 3.0,
    seed: int = 0,
    workers: int = 1,
    block_rows: int = DEFAULT_BLOCK_ROWS,
) -> list[ScoreSet]:
    """Authentic/impostor score sets per group from a subsample of images.

    ``groups`` maps subject_id to a group name; subjects not in the mapping
    are excluded. Per group, ceil(fraction * images) images are drawn by a
    seeded sample over sorted image_ids; authentic scores are all
    within-subject pairs among the selected images and impostor scores all
    cross-subject pairs within the same group.
    """
    if not 0 < fraction <= 1:
        raise EvalError(f"fraction must be in (0, 1], got {fraction}")
    for subject, group in groups.items():
        if group == "needs_review":
            raise EvalError(
                f"subject {subject!r} is unlabeled (needs_review); group-split "
                f"evaluation refuses to run until every subject is labeled"
            )
    by_group: dict[str, list[str]] = {}
    for subject in sorted(manifest.subjects):
        group = groups.get(subject)
        if group is not None:
            by_group.setdefault(group, []).append(subject)

    out = []
    for group in sorted(by_group):
        subjects = by_group[group]
        if len(subjects) < 2:
            raise EvalError(
                f"group {group!r} has {len(subjects)} subject(s); impostor "
                f"pairs need at least 2"
            )
        out.append(
            _group_score_set(
                manifest, store, group, subjects, fraction, seed, workers, block_rows
            )
        )
    return out


def _group_score_set(
    manifest: Manifest,
    store: EmbeddingStore,
    group: str,
    subjects: list[str],
    fraction: float,
    seed: int,
    workers: int,
    block_rows: int,
) -> ScoreSet:
    subject_of = {}
    for subject in subjects:
        for pos in manifest.subjects[subject]:
            subject_of[manifest.records[pos].image_id] = subject
    all_ids = sorted(subject_of)
    take = math.ceil(Fraction(fraction) * len(all_ids))
    if take < len(all_ids):
        rng = random.Random(f"{seed}|scoreset|{group}")
        selected = set(rng.sample(all_ids, take))
    else:
        selected = set(all_ids)

    # Selected images grouped by subject, ids sorted inside each subject.
    per_subject: dict[str, list[str]] = {s: [] for s in subjects}
    for image_id in all_ids:
        if image_id in selected:
            per_subject[subject_of[image_id]].append(image_id)
    for subject in subjects:
        before = len(manifest.subjects[subject])
        if before >= 2 and len(per_subject[subject]) < 2:
            logger.warning(
                "group %s: sampling left subject %s with %d image(s); its "
                "authentic pairs vanish",
                group,
                subject,
                len(per_subject[subject]),
            )

    index_of = {rec.image_id: rec.embedding_index for rec in manifest.records}
    ordered_ids: list[str] = []
    seg_ends: list[int] = []
    for subject in subjects:
        ordered_ids.extend(per_subject[subject])
        seg_ends.append(len(ordered_ids))
    n = len(ordered_ids)
    vectors = store.vectors[
        np.asarray([index_of[i] for i in ordered_ids], dtype=np.intp)
    ]

    # Upper-triangle pair counts fix each row's slot in the output arrays, so
    # worker blocks can fill disjoint ranges in any order.
    row_end = np.empty(n, dtype=np.int64)
    start = 0
    for end in seg_ends:
        row_end[start:end] = end
        start = end
    rows = np.arange(n, dtype=np.int64)
    auth_len = row_end - rows - 1
    imp_len = n - row_end
    auth_off = np.concatenate(([0], np.cumsum(auth_len)))
    imp_off = np.concatenate(([0], np.cumsum(imp_len)))
    authentic = np.empty(int(auth_off[-1]), dtype=np.float32)
    impostor = np.empty(int(imp_off[-1]), dtype=np.float32)

    blocks = [(s, min(s + block_rows, n)) for s in range(0, n, block_rows)]

    def fill_block(block: tuple[int, int]) -> None:
        lo, hi = block
        scores = block_scores(vectors[lo:hi], vectors)
        for p in range(lo, hi):
            row = scores[p - lo]
            end = int(row_end[p])
            authentic[auth_off[p]:auth_off[p + 1]] = row[p + 1:end]
            impostor[imp_off[p]:imp_off[p + 1]] = row[end:]

    deterministic_map(fill_block, blocks, workers=workers)
    return ScoreSet(
        group=group,
        authentic=authentic,
        impostor=impostor,
        subsample_fraction=fraction,
        seed=seed,
    )


class EvalTable(NamedTuple):
    """Per-fmr-target operating points plus the full curve for one group."""

    group: str
    rows: tuple[tuple[float, TprAtFmr], ...]
    curve: RocCurve


def evaluate_score_set(
    scores: ScoreSet, fmr_targets: Sequence[float], roc_points: int = 200
) -> EvalTable:
    """Threshold/TPR at each target plus an ROC curve, sorting scores once."""
    impostor = np.sort(_as_scores(scores.impostor, "impostor"))
    authentic = np.sort(_as_scores(scores.authentic, "authentic"))
    rows = []
    for fmr in fmr_targets:
        if not 0 < fmr < 1:
            raise EvalError(f"fmr target must be in (0, 1), got {fmr}")
        threshold, flag = _observed_threshold(impostor, _match_budget(fmr, impostor.size))
        tpr = (
            authentic.size - int(np.searchsorted(authentic, threshold, side="left"))
        ) / authentic.size
        rows.append((fmr, TprAtFmr(tpr, threshold, flag)))
    curve = _roc_from_sorted(impostor, authentic, roc_points)
    return EvalTable(group=scores.group, rows=tuple(rows), curve=curve)


def save_score_set(scores: ScoreSet, prefix: str | Path) -> dict:
    """Write <prefix>_{authentic,impostor}.fcss plus a JSON sidecar."""
    prefix = Path(prefix)
    auth_file = prefix.with_name(prefix.name + "_authentic.fcss")
    imp_file = prefix.with_name(prefix.name + "_impostor.fcss")
    write_vector_file(scores.authentic.reshape(-1, 1), auth_file, SCORES_MAGIC)
    write_vector_file(scores.impostor.reshape(-1, 1), imp_file, SCORES_MAGIC)
    sidecar = {
        "group": scores.group,
        "seed": scores.seed,
        "subsample_fraction": scores.subsample_fraction,
        "authentic_count": int(scores.authentic.size),
        "impostor_count": int(scores.impostor.size),
        "authentic_file": auth_file.name,
        "impostor_file": imp_file.name,
    }
    sidecar_path = prefix.with_name(prefix.name + ".json")
    sidecar_path.write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    return sidecar


def load_score_set(prefix: str | Path) -> ScoreSet:
    prefix = Path(prefix)
    sidecar = json.loads(
        prefix.with_name(prefix.name + ".json").read_text(encoding="utf-8")
    )
    directory = prefix.parent
    authentic = read_vector_file(directory / sidecar["authentic_file"], SCORES_MAGIC)
    impostor = read_vector_file(directory / sidecar["impostor_file"], SCORES_MAGIC)
    return ScoreSet(
        group=sidecar["group"],
        authentic=authentic.reshape(-1),
        impostor=impostor.reshape(-1),
        subsample_fraction=sidecar["subsample_fraction"],
        seed=sidecar["seed"],
    )


def write_roc_csv(curve: RocCurve, path: str | Path) -> None:
    lines = ["fmr,tpr,threshold"]
    lines.extend(f"{repr(f)},{repr(t)},{repr(th)}" for f, t, th in curve.points)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_histogram_csv(hist: list[tuple[float, float]], path: str | Path) -> None:
    lines = ["bin_center,density"]
    lines.extend(f"{repr(c)},{repr(d)}" for c, d in hist)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
