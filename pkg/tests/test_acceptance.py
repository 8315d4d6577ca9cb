"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the criterion lines
as they complete. The synthetic 200-identity corpus plants 5% mislabels
(drawn from other identities' clusters), 10% near-duplicates (cosine >=
0.95), and 4 split-identity pairs; ground truth travels with the corpus so
removals can be scored.
"""
from __future__ import annotations

import itertools
import json
import subprocess
import sys
import time
from bisect import bisect_left
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from facecurate import (
    Manifest,
    PipelineConfig,
    cosine,
    load_manifest,
    mislabel_clean,
    resume_pipeline,
    roc_curve,
    run_pipeline,
    threshold_at_fmr,
    tpr_at_fmr,
)
from facecurate.candidates import read_candidates, write_candidates
from facecurate.evalkit import UNSUPPORTED_FMR, ScoreSet
from conftest import (
    build_synthetic_corpus,
    corpus_to_disk,
    ground_truth_decisions,
    make_records,
    make_store,
)
from test_pipeline import ARTIFACT_GLOBS, artifact_bytes


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE {name}: FAIL", flush=True)
        raise
    print(f"\nACCEPTANCE {name}: PASS", flush=True)


# ---------------------------------------------------------------------------
# Shared full-pipeline run on the 200-identity corpus
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def corpus():
    return build_synthetic_corpus()


@pytest.fixture(scope="module")
def pipeline_result(corpus, tmp_path_factory):
    """Single-threaded halt + resume run with ground-truth decisions."""
    base = tmp_path_factory.mktemp("acceptance")
    src = base / "src"
    src.mkdir()
    manifest_path, embeddings_path = corpus_to_disk(corpus, src)

    def config(name, workers=1):
        return PipelineConfig(
            manifest_path=manifest_path,
            embeddings_path=embeddings_path,
            output_dir=str(base / name),
            seed=7,
            workers=workers,
        )

    cfg = config("run_main")
    started = time.monotonic()
    halted = run_pipeline(cfg)
    halt_elapsed = time.monotonic() - started
    assert halted.halted, "expected the run to halt for merge review"

    run_dir = Path(cfg.output_dir)
    candidates = read_candidates(run_dir / "03_candidates.jsonl")
    decisions_path = base / "decisions.jsonl"
    write_candidates(ground_truth_decisions(corpus, candidates), decisions_path)

    started = time.monotonic()
    summary = resume_pipeline(run_dir, decisions_path)
    elapsed = halt_elapsed + (time.monotonic() - started)

    return {
        "base": base,
        "config": cfg,
        "make_config": config,
        "run_dir": run_dir,
        "summary": summary,
        "candidates": candidates,
        "decisions_path": decisions_path,
        "elapsed": elapsed,
    }


def test_synthetic_corpus_pipeline(corpus, pipeline_result):
    with criterion("synthetic-corpus pipeline"):
        summary = pipeline_result["summary"]
        mislabel_report = summary.stages[1]
        assert mislabel_report.stage_name == "mislabel"
        removed = {i for i, r in mislabel_report.removed_images if r == "mislabeled"}

        # (a) >= 90% of planted mislabels removed, <= 2% false removals.
        planted = corpus.planted_mislabels
        caught = len(planted & removed)
        assert caught >= 0.90 * len(planted), (
            f"only {caught}/{len(planted)} planted mislabels removed"
        )
        genuine = mislabel_report.images_before - len(planted)
        false_removals = len(removed - planted)
        assert false_removals <= 0.02 * genuine, (
            f"{false_removals} false removals out of {genuine} genuine images"
        )

        # (b) every planted split pair surfaces as a candidate above 0.25.
        offered = {
            c.pair: c.mean_score for c in pipeline_result["candidates"]
        }
        for pair in corpus.split_pairs:
            pair = tuple(sorted(pair))
            assert pair in offered, f"split pair {pair} never surfaced"
            assert offered[pair] > 0.25

        # (c) exhaustive within-subject check: no surviving pair >= 0.91.
        final = load_manifest(pipeline_result["run_dir"] / "04_neardup_manifest.csv")
        store = corpus.store
        for subject in final.subjects:
            idx = [final.records[p].embedding_index for p in final.subjects[subject]]
            vecs = store.vectors[np.asarray(idx)].astype(np.float64)
            scores = np.clip(vecs @ vecs.T, -1.0, 1.0)
            np.fill_diagonal(scores, -1.0)
            assert scores.max() < 0.91, f"subject {subject} keeps a near-dup pair"

        # Single-threaded wall time at this scale.
        assert pipeline_result["elapsed"] < 60.0, (
            f"pipeline took {pipeline_result['elapsed']:.1f}s"
        )


# ---------------------------------------------------------------------------
# Gap-rule oracle
# ---------------------------------------------------------------------------


def test_gap_rule_oracle():
    with criterion("gap-rule oracle"):
        rng = np.random.default_rng(2024)
        sizes = {f"s{k:04d}": int(rng.integers(3, 51)) for k in range(1000)}
        manifest = Manifest.from_records(make_records(sizes))
        store = make_store(rng.normal(size=(sum(sizes.values()), 16)))
        _, report = mislabel_clean(manifest, store)
        got = {i for i, _ in report.removed_images}

        expected: set[str] = set()
        for subject in manifest.subjects:
            records = manifest.subject_records(subject)
            if len(records) <= 2:
                continue
            means = {}
            for rec in records:
                scores = [
                    cosine(
                        store.vectors[rec.embedding_index].astype(np.float64),
                        store.vectors[other.embedding_index].astype(np.float64),
                    )
                    for other in records
                    if other.image_id != rec.image_id
                ]
                means[rec.image_id] = sum(scores) / len(scores)
            ranked = sorted(means, key=lambda i: (-means[i], i))
            best_pos, best_delta = None, 0.0
            for pos in range(len(ranked) - 1):
                delta = means[ranked[pos]] - means[ranked[pos + 1]]
                if delta > best_delta or (
                    best_pos is not None and delta == best_delta
                ):
                    best_pos, best_delta = pos, delta
            if best_pos is not None:
                expected.update(ranked[best_pos + 1:])
        survivors: dict[str, list[str]] = {}
        for rec in manifest.records:
            if rec.image_id not in expected:
                survivors.setdefault(rec.subject_id, []).append(rec.image_id)
        for ids in survivors.values():
            if len(ids) == 1:
                expected.add(ids[0])

        assert got == expected


# ---------------------------------------------------------------------------
# ROC / FMR oracle
# ---------------------------------------------------------------------------


def _oracle_threshold(scores: list[float], fmr: float):
    """Exhaustive candidate scan: every distinct score ascending, then the
    float successor of the maximum."""
    ordered = sorted(scores)
    n = len(ordered)
    for candidate in sorted(set(ordered)):
        count = n - bisect_left(ordered, candidate)
        if Fraction(count, n) <= Fraction(fmr):
            return candidate, None
    return float(np.nextafter(ordered[-1], np.inf)), UNSUPPORTED_FMR


def test_roc_fmr_oracle():
    with criterion("ROC/FMR oracle"):
        rng = np.random.default_rng(555)
        for trial in range(200):
            n_imp = int(rng.integers(1, 1001))
            n_auth = int(rng.integers(1, 1001))
            if trial % 3 == 0:
                # Coarse grids force heavy ties across the cut.
                grid = np.round(rng.uniform(-1, 1, size=8), 2)
                impostor = rng.choice(grid, size=n_imp)
                authentic = rng.choice(grid, size=n_auth)
            else:
                impostor = np.clip(rng.normal(0, 0.3, size=n_imp), -1, 1)
                authentic = np.clip(rng.normal(0.4, 0.3, size=n_auth), -1, 1)
            scores = ScoreSet("g", authentic, impostor)
            fmrs = [
                float(rng.uniform(1e-4, 0.999)),
                0.5 / n_imp,  # below 1/N: must flag
                min(0.999, 1.5 / n_imp),
            ]
            for fmr in fmrs:
                expected = _oracle_threshold([float(x) for x in impostor], fmr)
                got = threshold_at_fmr(impostor, fmr)
                assert tuple(got) == expected, f"trial {trial} fmr {fmr}"
                tpr, threshold, flag = tpr_at_fmr(scores, fmr)
                auth_sorted = sorted(float(x) for x in authentic)
                expected_tpr = (
                    n_auth - bisect_left(auth_sorted, threshold)
                ) / n_auth
                assert tpr == expected_tpr
            curve = roc_curve(scores, points=50)
            fmr_list = [p[0] for p in curve.points]
            tpr_list = [p[1] for p in curve.points]
            thr_list = [p[2] for p in curve.points]
            assert fmr_list == sorted(fmr_list)
            assert tpr_list == sorted(tpr_list)
            assert thr_list == sorted(thr_list, reverse=True)
            assert all(0 <= f <= 1 and 0 <= t <= 1 for f, t in zip(fmr_list, tpr_list))


# ---------------------------------------------------------------------------
# Directional reproduction of the before/after accuracy gain
# ---------------------------------------------------------------------------


def test_directional_accuracy_gain(pipeline_result):
    with criterion("directional before/after gain"):
        summary = pipeline_result["summary"]
        before = summary.eval_tables["before"]
        after = summary.eval_tables["after"]
        key = repr(1e-3)
        assert sorted(before) == sorted(after) == ["female", "male"]
        for group in ("male", "female"):
            row_before = before[group]["tpr_at_fmr"][key]
            row_after = after[group]["tpr_at_fmr"][key]
            gain = row_after["tpr"] - row_before["tpr"]
            assert gain >= 0.10, f"{group}: tpr gain {gain:.4f} < 10pp"
            assert row_after["threshold"] < row_before["threshold"], (
                f"{group}: threshold did not drop "
                f"({row_before['threshold']:.4f} -> {row_after['threshold']:.4f})"
            )


# ---------------------------------------------------------------------------
# Determinism across thread counts
# ---------------------------------------------------------------------------


def test_determinism_one_vs_eight_workers(pipeline_result):
    with criterion("determinism 1 vs 8 threads"):
        decisions = pipeline_result["decisions_path"]
        cfg1 = pipeline_result["make_config"]("run_w1", workers=1)
        cfg8 = pipeline_result["make_config"]("run_w8", workers=8)
        s1 = run_pipeline(cfg1, decisions_path=decisions)
        s8 = run_pipeline(cfg8, decisions_path=decisions)
        assert not s1.halted and not s8.halted
        bytes1 = artifact_bytes(Path(cfg1.output_dir))
        bytes8 = artifact_bytes(Path(cfg8.output_dir))
        assert sorted(bytes1) == sorted(bytes8)
        mismatched = [k for k in bytes1 if bytes1[k] != bytes8[k]]
        assert not mismatched, f"artifacts differ: {mismatched[:10]}"
        assert s1.stages == s8.stages
        assert s1.eval_tables == s8.eval_tables


# ---------------------------------------------------------------------------
# Stage accounting
# ---------------------------------------------------------------------------


def test_stage_accounting(pipeline_result):
    with criterion("stage accounting"):
        stages = pipeline_result["summary"].stages
        assert [r.stage_name for r in stages] == [
            "pose",
            "mislabel",
            "merge",
            "near_duplicate",
        ]
        for prev, nxt in zip(stages, stages[1:]):
            assert prev.images_after == nxt.images_before
        merge = stages[2]
        assert merge.images_before == merge.images_after
        for report in stages:
            assert report.images_after == report.images_before - len(
                report.removed_images
            )


# ---------------------------------------------------------------------------
# Secondary: review flow with 48 candidates against the real service
# ---------------------------------------------------------------------------


def test_review_flow_48_candidates(tmp_path):
    from fastapi.testclient import TestClient

    from facecurate import MergeCandidate
    from facecurate.review import create_review_app

    with criterion("review flow, 48 candidates (secondary)"):
        corpus = build_synthetic_corpus(
            n_identities=24, dim=64, images_range=(14, 22), n_split_pairs=2, seed=777
        )
        src = tmp_path / "src"
        src.mkdir()
        manifest_path, embeddings_path = corpus_to_disk(corpus, src)
        cfg = PipelineConfig(
            manifest_path=manifest_path,
            embeddings_path=embeddings_path,
            output_dir=str(tmp_path / "run"),
            eval_fraction=1.0,
            seed=5,
        )
        assert run_pipeline(cfg).halted
        run_dir = Path(cfg.output_dir)
        real = read_candidates(run_dir / "03_candidates.jsonl")

        # Seed the service with 48 candidates: the real pairs plus filler
        # pairs drawn from the same subjects. Resume only needs decisions
        # for the real pairs; extras are ignored by the overlay.
        subjects = sorted(corpus.manifest.subjects)
        taken = {c.pair for c in real}
        filler = []
        for a, b in itertools.combinations(subjects, 2):
            if len(real) + len(filler) == 48:
                break
            if (a, b) not in taken:
                filler.append(
                    MergeCandidate(a, b, 0.26 - 1e-4 * len(filler))
                )
        seeded = real + filler
        assert len(seeded) == 48
        candidates_path = tmp_path / "48_candidates.jsonl"
        write_candidates(seeded, candidates_path)
        decisions_path = tmp_path / "decisions.jsonl"

        def make_client() -> TestClient:
            return TestClient(
                create_review_app(
                    candidates_path,
                    run_dir / "02_mislabel_manifest.csv",
                    tmp_path / "images",
                    decisions_path,
                    reps=5,
                    seed=cfg.seed,
                )
            )

        split = {tuple(sorted(p)) for p in corpus.split_pairs}

        def decide_next(client: TestClient) -> bool:
            page = client.get(
                "/candidates", params={"status": "pending", "limit": 1}
            ).json()
            if not page["items"]:
                return False
            item = page["items"][0]
            pair = (item["subject_a"], item["subject_b"])
            decision = "same_person" if pair in split else "different_person"
            resp = client.post(
                f"/candidates/{pair[0]}/{pair[1]}/decision",
                json={"decision": decision, "decided_by": "ui"},
            )
            assert resp.status_code == 200
            return True

        client = make_client()
        for _ in range(20):
            assert decide_next(client)
        # Kill and restart mid-session: a fresh service + client on the same
        # files must see all 20 decisions.
        client = make_client()
        assert client.get("/progress").json()["decided"] == 20
        while decide_next(client):
            pass
        progress = client.get("/progress").json()
        assert progress == {"total": 48, "decided": 48, "complete": True}

        summary = resume_pipeline(run_dir, decisions_path)
        assert not summary.halted
        assert len(summary.stages[2].merged_subjects) == len(split)


# ---------------------------------------------------------------------------
# Scale smoke test (runs the CLI in a subprocess and meters it)
# ---------------------------------------------------------------------------


def _write_scale_fixture(directory: Path, n_subjects=2000, per_subject=50, dim=512):
    import csv as csv_module
    import struct

    rng = np.random.default_rng(99)
    total = n_subjects * per_subject
    emb_path = directory / "embeddings.fceb"
    man_path = directory / "manifest.csv"
    with open(emb_path, "wb") as emb, open(man_path, "w", newline="", encoding="utf-8") as man:
        emb.write(struct.pack("<4sIII", b"FCEB", 1, total, dim))
        writer = csv_module.writer(man, lineterminator="\n")
        writer.writerow(
            ["image_id", "subject_id", "embedding_index", "roll", "pitch", "yaw",
             "gender_vote", "source_path"]
        )
        index = 0
        for s in range(n_subjects):
            subject = f"s{s:04d}"
            gender = "male" if s % 2 == 0 else "female"
            center = rng.normal(size=dim)
            center /= np.linalg.norm(center)
            mu = rng.uniform(0.72, 0.82)
            noise = rng.normal(size=(per_subject, dim))
            noise /= np.linalg.norm(noise, axis=1, keepdims=True)
            members = np.sqrt(mu) * center + np.sqrt(1 - mu) * noise
            members /= np.linalg.norm(members, axis=1, keepdims=True)
            emb.write(members.astype("<f4").tobytes())
            for i in range(per_subject):
                writer.writerow(
                    [f"{subject}_i{i:04d}", subject, index, "0.0", "0.0", "0.0",
                     gender, ""]
                )
                index += 1
    return man_path, emb_path


def test_scale_smoke(tmp_path):
    psutil = pytest.importorskip("psutil")
    with criterion("scale smoke 100k x 512"):
        man_path, emb_path = _write_scale_fixture(tmp_path)
        config = {
            "manifest_path": str(man_path),
            "embeddings_path": str(emb_path),
            "output_dir": str(tmp_path / "run_scale"),
            "eval_fraction": 0.2,
            "seed": 3,
            "workers": 8,
        }
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config), encoding="utf-8")

        started = time.monotonic()
        proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "facecurate.cli",
                "run",
                "--config",
                str(config_path),
                "--auto-decide",
                "different_person",
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
        )
        meter = psutil.Process(proc.pid)
        peak_rss = 0
        while proc.poll() is None:
            try:
                peak_rss = max(peak_rss, meter.memory_info().rss)
            except psutil.NoSuchProcess:
                break
            if time.monotonic() - started > 600:
                proc.kill()
                pytest.fail("scale run exceeded 10 minutes")
            time.sleep(0.2)
        elapsed = time.monotonic() - started
        output = proc.stdout.read().decode, proc.returncode
        assert proc.returncode == 0, f"pipeline failed: {output[0]()[-2000:]}"
        assert elapsed < 600, f"took {elapsed:.0f}s"
        assert peak_rss < 4 * 1024**3, f"peak RSS {peak_rss / 1024**3:.2f} GiB"

        summary = json.loads(
            (tmp_path / "run_scale" / "summary.json").read_text(encoding="utf-8")
        )
        assert not summary["halted"]
        assert [s["stage_name"] for s in summary["stages"]] == [
            "pose",
            "mislabel",
            "merge",
            "near_duplicate",
        ]
        print(
            f"\n  scale: {elapsed:.0f}s, peak {peak_rss / 1024**3:.2f} GiB",
            flush=True,
        )
