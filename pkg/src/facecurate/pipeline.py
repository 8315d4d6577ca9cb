"""Pipeline orchestration with a run-directory audit trail.

A run executes pose -> mislabel -> merge candidates -> (human decisions) ->
merge -> near-duplicate, evaluating recognition accuracy before and after.
Every intermediate manifest and stage report lands in the run directory
under a numbered prefix; the directory is append-only so curation decisions
stay auditable. When candidates need human review the run halts, emits the
candidate file plus a resume token, and a later resume with a complete
decision file finishes the remaining stages. Identical config, inputs, and
decisions reproduce the run directory byte for byte.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .candidates import (
    load_decisions,
    merge_decisions,
    pending_pairs,
    read_candidates,
    write_candidates,
)
from .embeddings import load_embeddings
from .errors import PipelineError
from .evalkit import (
    EvalTable,
    ScoreSet,
    build_score_sets,
    evaluate_score_set,
    histogram,
    load_score_set,
    save_score_set,
    write_histogram_csv,
    write_roc_csv,
)
from .gender import assign_gender, unresolved_subjects
from .manifest import (
    load_gender_sidecar,
    load_manifest,
    validate_against_store,
    write_gender_sidecar,
    write_manifest,
)
from .stages import (
    apply_merges,
    generate_merge_candidates,
    mislabel_clean,
    near_duplicate_clean,
    pose_filter,
)
from .types import EmbeddingStore, Manifest, MergeCandidate, PoseLimits, StageReport

logger = logging.getLogger(__name__)

RESUME_TOKEN = "resume_token.json"
SUMMARY_FILE = "summary.json"


@dataclass(frozen=True)
class PipelineConfig:
    manifest_path: str
    embeddings_path: str
    output_dir: str
    pose_limits: PoseLimits = PoseLimits()
    min_images: int = 10
    merge_threshold: float = 0.25
    reps: int = 5
    near_dup_threshold: float = 0.91
    min_gap: float = 0.0
    eval_fraction: float = 1.0 / 3.0
    fmr_targets: tuple[float, ...] = (1e-3, 1e-4, 1e-5)
    seed: int = 0
    gender_agreement: float = 0.75
    workers: int = 1

    def __post_init__(self) -> None:
        for name in ("manifest_path", "embeddings_path", "output_dir"):
            if not getattr(self, name):
                raise PipelineError(f"config field {name} must be a nonempty path")
        for name in ("merge_threshold", "near_dup_threshold", "gender_agreement"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise PipelineError(f"config field {name} must be in (0, 1), got {value}")
        if not 0 < self.eval_fraction <= 1:
            raise PipelineError(
                f"config field eval_fraction must be in (0, 1], got {self.eval_fraction}"
            )
        for fmr in self.fmr_targets:
            if not 0 < fmr < 1:
                raise PipelineError(f"fmr target must be in (0, 1), got {fmr}")
        if self.min_images < 1:
            raise PipelineError(f"min_images must be >= 1, got {self.min_images}")
        if self.reps < 1:
            raise PipelineError(f"reps must be >= 1, got {self.reps}")
        if self.workers < 1:
            raise PipelineError(f"workers must be >= 1, got {self.workers}")

    def to_json(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["pose_limits"] = dataclasses.asdict(self.pose_limits)
        doc["fmr_targets"] = list(self.fmr_targets)
        return doc

    @classmethod
    def from_json(cls, data: Mapping) -> "PipelineConfig":
        kwargs = dict(data)
        limits = kwargs.pop("pose_limits", None)
        if limits is not None:
            kwargs["pose_limits"] = PoseLimits(**limits)
        if "fmr_targets" in kwargs:
            kwargs["fmr_targets"] = tuple(kwargs["fmr_targets"])
        unknown = set(kwargs) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise PipelineError(f"unknown config field(s): {sorted(unknown)}")
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise PipelineError(f"cannot load config {path}: {exc}") from exc
        return cls.from_json(data)


@dataclass
class RunSummary:
    """Everything a reviewer needs about one run, minus the bulk artifacts."""

    config: dict
    stages: list[StageReport]
    eval_tables: dict[str, dict[str, dict]] = field(default_factory=dict)
    score_refs: dict[str, dict[str, str]] = field(default_factory=dict)
    halted: bool = False
    pending_candidates: int = 0
    version: str = __version__

    @property
    def phases(self) -> list[str]:
        return list(self.eval_tables)

    def final_phase(self) -> str:
        if not self.eval_tables:
            raise PipelineError("run summary holds no evaluation tables")
        return self.phases[-1]

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "config": self.config,
            "halted": self.halted,
            "pending_candidates": self.pending_candidates,
            "stages": [report.to_json() for report in self.stages],
            "eval_tables": self.eval_tables,
            "score_refs": self.score_refs,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "RunSummary":
        return cls(
            config=dict(data["config"]),
            stages=[StageReport.from_json(r) for r in data["stages"]],
            eval_tables={k: dict(v) for k, v in data["eval_tables"].items()},
            score_refs={k: dict(v) for k, v in data["score_refs"].items()},
            halted=data.get("halted", False),
            pending_candidates=data.get("pending_candidates", 0),
            version=data.get("version", __version__),
        )

    @classmethod
    def load(cls, run_dir: str | Path) -> "RunSummary":
        path = Path(run_dir) / SUMMARY_FILE
        try:
            return cls.from_json(json.loads(path.read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise PipelineError(f"cannot load run summary {path}: {exc}") from exc


def _write_json(doc: dict, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _table_to_json(table: EvalTable) -> dict:
    return {
        "group": table.group,
        "tpr_at_fmr": {
            repr(fmr): {
                "tpr": row.tpr,
                "threshold": row.threshold,
                "flag": row.flag,
            }
            for fmr, row in table.rows
        },
        "roc_points": len(table.curve.points),
    }


def _evaluate_phase(
    tag: str,
    manifest: Manifest,
    store: EmbeddingStore,
    config: PipelineConfig,
    run_dir: Path,
) -> tuple[dict[str, dict], dict[str, str]]:
    """Score, evaluate, and export one evaluation phase (before or after)."""
    groups = dict(manifest.gender_labels)
    score_sets = build_score_sets(
        manifest,
        store,
        groups,
        fraction=config.eval_fraction,
        seed=config.seed,
        workers=config.workers,
    )
    eval_dir = run_dir / "eval"
    eval_dir.mkdir(exist_ok=True)
    tables: dict[str, dict] = {}
    refs: dict[str, str] = {}
    for scores in score_sets:
        prefix = eval_dir / f"{tag}_{scores.group}"
        save_score_set(scores, prefix)
        refs[scores.group] = os.path.relpath(prefix, run_dir)
        table = evaluate_score_set(scores, config.fmr_targets)
        tables[scores.group] = _table_to_json(table)
        write_roc_csv(table.curve, eval_dir / f"roc_{tag}_{scores.group}.csv")
        write_histogram_csv(
            histogram(scores.authentic),
            eval_dir / f"hist_{tag}_{scores.group}_authentic.csv",
        )
        write_histogram_csv(
            histogram(scores.impostor),
            eval_dir / f"hist_{tag}_{scores.group}_impostor.csv",
        )
    return tables, refs


def _check_chain(stages: Sequence[StageReport]) -> None:
    for prev, nxt in zip(stages, stages[1:]):
        if prev.images_after != nxt.images_before:
            raise PipelineError(
                f"stage accounting broken: {prev.stage_name} ended with "
                f"{prev.images_after} images but {nxt.stage_name} started "
                f"with {nxt.images_before}"
            )


def _load_inputs(config: PipelineConfig) -> tuple[Manifest, EmbeddingStore]:
    manifest = load_manifest(config.manifest_path)
    store = load_embeddings(config.embeddings_path, expected_count=manifest.image_count)
    validate_against_store(manifest, store.count)
    return manifest, store


def _require_labels(manifest: Manifest) -> None:
    unresolved = unresolved_subjects(manifest)
    if unresolved:
        raise PipelineError(
            f"{len(unresolved)} subject(s) need manual gender labels before "
            f"group-split evaluation can run: {unresolved[:10]}"
            + ("..." if len(unresolved) > 10 else "")
        )


def run_pipeline(
    config: PipelineConfig,
    decisions_path: str | Path | None = None,
    auto_decide: str | None = None,
) -> RunSummary:
    """Execute the full curation + evaluation run.

    Halts after candidate generation when candidates exist and no decision
    file does; ``auto_decide="different_person"`` bypasses the human
    checkpoint for CI runs only and is a deliberate method deviation.
    """
    run_dir = Path(config.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if (run_dir / SUMMARY_FILE).exists():
        raise PipelineError(
            f"{run_dir} already holds a completed run; run directories are append-only"
        )
    if (run_dir / RESUME_TOKEN).exists():
        raise PipelineError(
            f"{run_dir} holds a halted run; use resume with a decision file"
        )
    _write_json(config.to_json(), run_dir / "config.json")

    manifest, store = _load_inputs(config)
    manifest = assign_gender(manifest, agreement=config.gender_agreement)
    write_gender_sidecar(dict(manifest.gender_labels), run_dir / "gender_labels.csv")
    write_manifest(manifest, run_dir / "00_input_manifest.csv")
    _require_labels(manifest)

    eval_tables: dict[str, dict[str, dict]] = {}
    score_refs: dict[str, dict[str, str]] = {}
    tables, refs = _evaluate_phase("before", manifest, store, config, run_dir)
    eval_tables["before"] = tables
    score_refs["before"] = refs

    posed, pose_report = pose_filter(
        manifest, limits=config.pose_limits, min_images=config.min_images
    )
    write_manifest(posed, run_dir / "01_pose_manifest.csv")
    _write_json(pose_report.to_json(), run_dir / "01_pose.json")

    cleaned, mislabel_report = mislabel_clean(
        posed, store, min_gap=config.min_gap, workers=config.workers
    )
    write_manifest(cleaned, run_dir / "02_mislabel_manifest.csv")
    _write_json(mislabel_report.to_json(), run_dir / "02_mislabel.json")

    candidates = generate_merge_candidates(
        cleaned,
        store,
        threshold=config.merge_threshold,
        reps=config.reps,
        seed=config.seed,
        workers=config.workers,
    )
    write_candidates(candidates, run_dir / "03_candidates.jsonl")
    _write_json(
        {
            "seed": config.seed,
            "reps": config.reps,
            "threshold": config.merge_threshold,
            "candidates": len(candidates),
        },
        run_dir / "03_candidates.meta.json",
    )

    stages = [pose_report, mislabel_report]
    decisions = _resolve_decisions(candidates, decisions_path, auto_decide)
    if decisions is None:
        _write_json(
            {
                "halted_after": "02_mislabel",
                "candidates_file": "03_candidates.jsonl",
                "pending": len(candidates),
            },
            run_dir / RESUME_TOKEN,
        )
        logger.info(
            "run halted: %d candidate(s) await review in %s",
            len(candidates),
            run_dir / "03_candidates.jsonl",
        )
        return RunSummary(
            config=config.to_json(),
            stages=stages,
            eval_tables=eval_tables,
            score_refs=score_refs,
            halted=True,
            pending_candidates=len(candidates),
        )

    return _finish_run(
        config, run_dir, cleaned, store, stages, decisions, eval_tables, score_refs
    )


def _resolve_decisions(
    candidates: list[MergeCandidate],
    decisions_path: str | Path | None,
    auto_decide: str | None,
) -> list[MergeCandidate] | None:
    """Decided candidate list, or None when the run must halt for review."""
    if not candidates:
        return []
    if auto_decide is not None:
        if auto_decide != "different_person":
            raise PipelineError(
                f"auto_decide supports only 'different_person', got {auto_decide!r}"
            )
        logger.warning(
            "auto-deciding %d candidate(s) as different_person; this bypasses "
            "the manual verification step",
            len(candidates),
        )
        return [c.decided("different_person", decided_by="auto") for c in candidates]
    if decisions_path is None or not Path(decisions_path).exists():
        return None
    decided = merge_decisions(candidates, load_decisions(decisions_path))
    pending = pending_pairs(decided)
    if pending:
        raise PipelineError(
            f"decision file leaves {len(pending)} candidate(s) pending: {pending[:5]}"
        )
    return decided


def _finish_run(
    config: PipelineConfig,
    run_dir: Path,
    cleaned: Manifest,
    store: EmbeddingStore,
    stages: list[StageReport],
    decisions: list[MergeCandidate],
    eval_tables: dict[str, dict[str, dict]],
    score_refs: dict[str, dict[str, str]],
) -> RunSummary:
    write_candidates(decisions, run_dir / "03_decisions.jsonl")
    merged, merge_report = apply_merges(cleaned, decisions)
    write_manifest(merged, run_dir / "03_merge_manifest.csv")
    _write_json(merge_report.to_json(), run_dir / "03_merge.json")

    deduped, neardup_report = near_duplicate_clean(
        merged,
        store,
        threshold=config.near_dup_threshold,
        min_images=config.min_images,
        workers=config.workers,
    )
    write_manifest(deduped, run_dir / "04_neardup_manifest.csv")
    _write_json(neardup_report.to_json(), run_dir / "04_neardup.json")

    stages = [*stages, merge_report, neardup_report]
    _check_chain(stages)

    _require_labels(deduped)
    tables, refs = _evaluate_phase("after", deduped, store, config, run_dir)
    eval_tables["after"] = tables
    score_refs["after"] = refs

    summary = RunSummary(
        config=config.to_json(),
        stages=stages,
        eval_tables=eval_tables,
        score_refs=score_refs,
        halted=False,
    )
    _write_json(summary.to_json(), run_dir / SUMMARY_FILE)
    token = run_dir / RESUME_TOKEN
    if token.exists():
        token.unlink()
    return summary


def resume_pipeline(run_dir: str | Path, decisions_path: str | Path) -> RunSummary:
    """Finish a halted run using a completed decision file."""
    run_dir = Path(run_dir)
    token_path = run_dir / RESUME_TOKEN
    if not token_path.exists():
        if (run_dir / SUMMARY_FILE).exists():
            raise PipelineError(f"{run_dir} already completed; nothing to resume")
        raise PipelineError(f"{run_dir} holds no resume token; nothing to resume")
    config = PipelineConfig.load(run_dir / "config.json")
    if not Path(decisions_path).exists():
        raise PipelineError(f"decision file {decisions_path} does not exist")

    cleaned = load_manifest(run_dir / "02_mislabel_manifest.csv")
    labels = load_gender_sidecar(run_dir / "gender_labels.csv")
    cleaned = cleaned.with_gender_labels(
        {s: l for s, l in labels.items() if s in cleaned.subjects}
    )
    store = load_embeddings(config.embeddings_path)
    validate_against_store(cleaned, store.count)

    candidates = read_candidates(run_dir / "03_candidates.jsonl")
    decided = merge_decisions(candidates, load_decisions(decisions_path))
    pending = pending_pairs(decided)
    if pending:
        raise PipelineError(
            f"decision file leaves {len(pending)} candidate(s) pending: {pending[:5]}"
        )

    stages = [
        StageReport.from_json(
            json.loads((run_dir / name).read_text(encoding="utf-8"))
        )
        for name in ("01_pose.json", "02_mislabel.json")
    ]
    eval_tables: dict[str, dict[str, dict]] = {}
    score_refs: dict[str, dict[str, str]] = {}
    before_tables, before_refs = _reload_phase("before", run_dir, config)
    eval_tables["before"] = before_tables
    score_refs["before"] = before_refs
    return _finish_run(
        config, run_dir, cleaned, store, stages, decided, eval_tables, score_refs
    )


def _reload_phase(
    tag: str, run_dir: Path, config: PipelineConfig
) -> tuple[dict[str, dict], dict[str, str]]:
    """Rebuild a phase's tables from its exported score sets."""
    eval_dir = run_dir / "eval"
    tables: dict[str, dict] = {}
    refs: dict[str, str] = {}
    for sidecar in sorted(eval_dir.glob(f"{tag}_*.json")):
        prefix = eval_dir / sidecar.name[: -len(".json")]
        scores = load_score_set(prefix)
        tables[scores.group] = _table_to_json(
            evaluate_score_set(scores, config.fmr_targets)
        )
        refs[scores.group] = os.path.relpath(prefix, run_dir)
    return tables, refs


def compare_runs(before: RunSummary, after: RunSummary) -> dict:
    """Per group and FMR target, final-phase accuracy of two runs side by side."""
    before_tables = before.eval_tables[before.final_phase()]
    after_tables = after.eval_tables[after.final_phase()]
    if sorted(before_tables) != sorted(after_tables):
        raise PipelineError(
            f"group mismatch: {sorted(before_tables)} vs {sorted(after_tables)}"
        )
    rows = []
    for group in sorted(before_tables):
        fmr_before = before_tables[group]["tpr_at_fmr"]
        fmr_after = after_tables[group]["tpr_at_fmr"]
        if sorted(fmr_before) != sorted(fmr_after):
            raise PipelineError(
                f"fmr target mismatch for group {group!r}: "
                f"{sorted(fmr_before)} vs {sorted(fmr_after)}"
            )
        for fmr_key in sorted(fmr_before, key=float, reverse=True):
            rows.append(
                {
                    "group": group,
                    "fmr": float(fmr_key),
                    "tpr_before": fmr_before[fmr_key]["tpr"],
                    "tpr_after": fmr_after[fmr_key]["tpr"],
                    "threshold_before": fmr_before[fmr_key]["threshold"],
                    "threshold_after": fmr_after[fmr_key]["threshold"],
                }
            )
    return {"rows": rows}
