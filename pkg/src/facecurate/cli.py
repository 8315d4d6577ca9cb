"""Command-line entry point: run, resume, review, eval, compare."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .embeddings import load_embeddings
from .errors import FacecurateError
from .evalkit import build_score_sets, evaluate_score_set, save_score_set, write_roc_csv
from .gender import assign_gender, unresolved_subjects
from .manifest import load_gender_sidecar, load_manifest, validate_against_store
from .pipeline import PipelineConfig, RunSummary, compare_runs, resume_pipeline, run_pipeline
from .review import review_serve


def _cmd_run(args: argparse.Namespace) -> int:
    config = PipelineConfig.load(args.config)
    summary = run_pipeline(
        config,
        decisions_path=args.decisions,
        auto_decide=args.auto_decide,
    )
    if summary.halted:
        print(
            f"halted: {summary.pending_candidates} merge candidate(s) need review.\n"
            f"  candidates: {Path(config.output_dir) / '03_candidates.jsonl'}\n"
            f"  next: facecurate review --candidates <file> --manifest "
            f"{Path(config.output_dir) / '02_mislabel_manifest.csv'} --images <dir>\n"
            f"  then: facecurate resume --run {config.output_dir} --decisions <file>"
        )
        return 2
    _print_summary(summary)
    return 0


def _cmd_resume(args: argparse.Namespace) -> int:
    summary = resume_pipeline(args.run, args.decisions)
    _print_summary(summary)
    return 0


def _print_summary(summary: RunSummary) -> None:
    for report in summary.stages:
        print(
            f"{report.stage_name}: images {report.images_before} -> "
            f"{report.images_after}, subjects {report.subjects_before} -> "
            f"{report.subjects_after}"
        )
    for phase, tables in summary.eval_tables.items():
        for group, table in tables.items():
            for fmr, row in table["tpr_at_fmr"].items():
                flag = f" ({row['flag']})" if row["flag"] else ""
                print(
                    f"{phase}/{group} fmr={fmr}: tpr={row['tpr']:.4f} "
                    f"threshold={row['threshold']:.4f}{flag}"
                )


def _cmd_review(args: argparse.Namespace) -> int:
    reps, seed = args.reps, args.seed
    meta_path = Path(str(args.candidates).replace(".jsonl", ".meta.json"))
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if args.reps is None:
            reps = meta.get("reps", 5)
        if args.seed is None:
            seed = meta.get("seed", 0)
    ui_dir = args.ui
    if ui_dir is None and Path("frontend/dist").is_dir():
        ui_dir = "frontend/dist"
    review_serve(
        args.candidates,
        args.manifest,
        args.images,
        bind_address=args.bind,
        decisions_path=args.decisions,
        reps=reps if reps is not None else 5,
        seed=seed if seed is not None else 0,
        ui_dir=ui_dir,
    )
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    fmr_targets = args.fmr if args.fmr else [1e-3, 1e-4, 1e-5]
    manifest = load_manifest(args.manifest)
    store = load_embeddings(args.embeddings, expected_count=manifest.image_count)
    validate_against_store(manifest, store.count)
    if args.groups == "all":
        groups = {subject: "all" for subject in manifest.subjects}
    else:
        if args.gender_sidecar:
            labels = load_gender_sidecar(args.gender_sidecar)
            manifest = manifest.with_gender_labels(
                {s: l for s, l in labels.items() if s in manifest.subjects}
            )
        else:
            manifest = assign_gender(manifest)
        unresolved = unresolved_subjects(manifest)
        if unresolved:
            raise FacecurateError(
                f"{len(unresolved)} subject(s) unlabeled (needs_review); "
                f"provide --gender-sidecar or use --groups all"
            )
        groups = dict(manifest.gender_labels)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    tables = {}
    for scores in build_score_sets(
        manifest, store, groups, fraction=args.fraction, seed=args.seed
    ):
        save_score_set(scores, out_dir / f"eval_{scores.group}")
        table = evaluate_score_set(scores, fmr_targets)
        write_roc_csv(table.curve, out_dir / f"roc_eval_{scores.group}.csv")
        tables[scores.group] = {
            "tpr_at_fmr": {
                repr(fmr): {"tpr": row.tpr, "threshold": row.threshold, "flag": row.flag}
                for fmr, row in table.rows
            },
            "roc_points": len(table.curve.points),
        }
        for fmr, row in table.rows:
            flag = f" ({row.flag})" if row.flag else ""
            print(
                f"{scores.group} fmr={fmr}: tpr={row.tpr:.4f} "
                f"threshold={row.threshold:.4f}{flag}"
            )
    summary = {
        "version": "eval-only",
        "config": {
            "manifest_path": str(args.manifest),
            "embeddings_path": str(args.embeddings),
            "eval_fraction": args.fraction,
            "fmr_targets": list(fmr_targets),
            "seed": args.seed,
        },
        "halted": False,
        "pending_candidates": 0,
        "stages": [],
        "eval_tables": {"eval": tables},
        "score_refs": {
            "eval": {group: f"eval_{group}" for group in tables}
        },
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2) + "\n", encoding="utf-8"
    )
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    before = RunSummary.load(args.run_before)
    after = RunSummary.load(args.run_after)
    comparison = compare_runs(before, after)
    header = (
        f"{'group':<10} {'fmr':<10} {'tpr_before':>10} {'tpr_after':>10} "
        f"{'thr_before':>10} {'thr_after':>10}"
    )
    print(header)
    for row in comparison["rows"]:
        print(
            f"{row['group']:<10} {row['fmr']:<10g} {row['tpr_before']:>10.4f} "
            f"{row['tpr_after']:>10.4f} {row['threshold_before']:>10.4f} "
            f"{row['threshold_after']:>10.4f}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="facecurate",
        description="Curate a labeled face-embedding dataset and evaluate "
        "verification accuracy before/after.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the curation pipeline")
    p_run.add_argument("--config", required=True, help="pipeline config JSON")
    p_run.add_argument("--decisions", default=None, help="merge decision file (JSONL)")
    p_run.add_argument(
        "--auto-decide",
        choices=["different_person"],
        default=None,
        help="CI only: decide every candidate automatically (method deviation)",
    )
    p_run.set_defaults(func=_cmd_run)

    p_resume = sub.add_parser("resume", help="finish a halted run")
    p_resume.add_argument("--run", required=True, help="run directory")
    p_resume.add_argument("--decisions", required=True, help="completed decision file")
    p_resume.set_defaults(func=_cmd_resume)

    p_review = sub.add_parser("review", help="serve the merge-review API/UI")
    p_review.add_argument("--candidates", required=True)
    p_review.add_argument("--manifest", required=True)
    p_review.add_argument("--images", required=True, help="image root directory")
    p_review.add_argument("--bind", default="127.0.0.1:8799")
    p_review.add_argument("--decisions", default=None)
    p_review.add_argument("--reps", type=int, default=None)
    p_review.add_argument("--seed", type=int, default=None)
    p_review.add_argument("--ui", default=None, help="static UI directory")
    p_review.set_defaults(func=_cmd_review)

    p_eval = sub.add_parser("eval", help="evaluate a manifest without curating")
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--embeddings", required=True)
    p_eval.add_argument("--output", required=True)
    p_eval.add_argument("--fraction", type=float, default=1.0 / 3.0)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument(
        "--fmr", type=float, action="append", default=None,
        help="FMR target (repeatable); default 1e-3 1e-4 1e-5",
    )
    p_eval.add_argument("--groups", choices=["gender", "all"], default="gender")
    p_eval.add_argument("--gender-sidecar", default=None)
    p_eval.set_defaults(func=_cmd_eval)

    p_cmp = sub.add_parser("compare", help="compare two run summaries")
    p_cmp.add_argument("run_before")
    p_cmp.add_argument("run_after")
    p_cmp.set_defaults(func=_cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except FacecurateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
