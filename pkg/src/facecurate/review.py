"""HTTP service backing the merge-verification checkpoint.

Serves pending candidates with the same sampled representative images that
produced their scores, accepts decisions, and appends each decision to the
decision file immediately (flush + fsync), so a crashed session resumes with
nothing lost. The service never touches manifests or embeddings; the
decision file is its only write target.
"""
from __future__ import annotations

import base64
import logging
import mimetypes
import threading
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .candidates import append_decision, load_decisions, read_candidates
from .errors import FacecurateError
from .manifest import load_manifest
from .simkit import sample_representatives
from .types import Manifest, MergeCandidate

logger = logging.getLogger(__name__)

# 1x1 gray PNG shown when a candidate's image file is missing on disk.
PLACEHOLDER_PNG = base64.b64decode(
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAAAAAA6fptVAAAACklEQVR4nGNoAAAAggCB"
    "d81ytgAAAABJRU5ErkJggg=="
)


class DecisionBody(BaseModel):
    decision: str
    decided_by: str | None = None


class ReviewState:
    """In-memory candidate queue with an append-only decision log."""

    def __init__(
        self,
        candidates: list[MergeCandidate],
        manifest: Manifest,
        image_root: Path,
        decisions_path: Path,
        reps: int = 5,
        seed: int = 0,
    ) -> None:
        self.manifest = manifest
        self.image_root = image_root
        self.decisions_path = decisions_path
        self.lock = threading.Lock()
        ordered = sorted(candidates, key=lambda c: (-c.mean_score, c.pair))
        self.candidates: dict[tuple[str, str], MergeCandidate] = {
            c.pair: c for c in ordered
        }
        if decisions_path.exists():
            for pair, decided in load_decisions(decisions_path).items():
                if pair in self.candidates and decided.decision != "pending":
                    self.candidates[pair] = self.candidates[pair].decided(
                        decided.decision,
                        decided_by=decided.decided_by,
                        decided_at=decided.decided_at,
                    )
        self.representatives = sample_representatives(manifest, reps=reps, seed=seed)
        self.source_paths = {
            rec.image_id: rec.source_path for rec in manifest.records
        }

    def ordered(self, status: str) -> list[MergeCandidate]:
        items = list(self.candidates.values())
        if status == "pending":
            return [c for c in items if c.decision == "pending"]
        if status == "decided":
            return [c for c in items if c.decision != "pending"]
        if status == "all":
            return items
        raise HTTPException(400, f"unknown status {status!r}")

    def get(self, a: str, b: str) -> MergeCandidate:
        candidate = self.candidates.get((a, b))
        if candidate is None:
            raise HTTPException(404, f"no candidate ({a}, {b})")
        return candidate

    def decide(self, a: str, b: str, body: DecisionBody) -> MergeCandidate:
        if body.decision not in ("same_person", "different_person"):
            raise HTTPException(
                400,
                f"decision must be same_person or different_person, got "
                f"{body.decision!r}",
            )
        with self.lock:
            candidate = self.get(a, b).decided(
                body.decision,
                decided_by=body.decided_by,
                decided_at=datetime.now(timezone.utc).isoformat(),
            )
            append_decision(candidate, self.decisions_path)
            self.candidates[candidate.pair] = candidate
        return candidate

    def progress(self) -> dict:
        decided = sum(1 for c in self.candidates.values() if c.decision != "pending")
        return {
            "total": len(self.candidates),
            "decided": decided,
            "complete": decided == len(self.candidates),
        }

    def candidate_images(self, subject: str) -> list[dict]:
        return [
            {
                "image_id": image_id,
                "url": f"/images/{image_id}",
                "source_path": self.source_paths.get(image_id, ""),
            }
            for image_id in self.representatives.get(subject, ())
        ]


def create_review_app(
    candidates_path: str | Path,
    manifest_path: str | Path,
    image_root: str | Path,
    decisions_path: str | Path,
    reps: int = 5,
    seed: int = 0,
    ui_dir: str | Path | None = None,
) -> FastAPI:
    candidates = read_candidates(candidates_path)
    manifest = load_manifest(manifest_path)
    state = ReviewState(
        candidates,
        manifest,
        Path(image_root),
        Path(decisions_path),
        reps=reps,
        seed=seed,
    )
    app = FastAPI(title="facecurate review")
    app.state.review = state

    @app.get("/progress")
    def progress() -> dict:
        return state.progress()

    @app.get("/candidates")
    def list_candidates(status: str = "pending", offset: int = 0, limit: int = 50) -> dict:
        items = state.ordered(status)
        return {
            "total": len(items),
            "offset": offset,
            "limit": limit,
            "items": [c.to_json() for c in items[offset:offset + limit]],
        }

    @app.get("/candidates/{a}/{b}")
    def get_candidate(a: str, b: str) -> dict:
        candidate = state.get(a, b)
        doc = candidate.to_json()
        doc["images"] = {
            a: state.candidate_images(a),
            b: state.candidate_images(b),
        }
        return doc

    @app.post("/candidates/{a}/{b}/decision")
    def post_decision(a: str, b: str, body: DecisionBody) -> dict:
        return state.decide(a, b, body).to_json()

    @app.get("/images/{image_id}")
    def get_image(image_id: str) -> Response:
        source = state.source_paths.get(image_id)
        if source is None:
            raise HTTPException(404, f"unknown image_id {image_id!r}")
        path = state.image_root / source
        if source and path.is_file():
            media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
            return Response(content=path.read_bytes(), media_type=media_type)
        return Response(content=PLACEHOLDER_PNG, media_type="image/png")

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app


def review_serve(
    candidates_path: str | Path,
    manifest_path: str | Path,
    image_root: str | Path,
    bind_address: str = "127.0.0.1:8799",
    decisions_path: str | Path | None = None,
    reps: int = 5,
    seed: int = 0,
    ui_dir: str | Path | None = None,
) -> None:
    """Run the review service until stopped."""
    import uvicorn

    if decisions_path is None:
        decisions_path = str(candidates_path) + ".decisions.jsonl"
    app = create_review_app(
        candidates_path,
        manifest_path,
        image_root,
        decisions_path,
        reps=reps,
        seed=seed,
        ui_dir=ui_dir,
    )
    host, _, port = bind_address.rpartition(":")
    if not host or not port.isdigit():
        raise FacecurateError(f"bind address must be host:port, got {bind_address!r}")
    logger.info("review service on http://%s (decisions -> %s)", bind_address, decisions_path)
    uvicorn.run(app, host=host, port=int(port), log_level="info")
