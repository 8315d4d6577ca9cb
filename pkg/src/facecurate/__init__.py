"""facecurate: curation and accuracy evaluation for face-embedding datasets."""

__version__ = "0.1.0"

from .embeddings import load_embeddings, write_embeddings
from .errors import (
    EmbeddingFormatError,
    EvalError,
    FacecurateError,
    ManifestError,
    PipelineError,
    StageError,
)
from .evalkit import (
    RocCurve,
    ScoreSet,
    build_score_sets,
    histogram,
    roc_curve,
    threshold_at_fmr,
    tpr_at_fmr,
)
from .filters import filter_min_images
from .gender import assign_gender
from .manifest import load_manifest, write_manifest
from .pipeline import PipelineConfig, RunSummary, compare_runs, resume_pipeline, run_pipeline
from .simkit import cosine, cross_subject_means, mean_similarity_ranking
from .stages import (
    apply_merges,
    generate_merge_candidates,
    mislabel_clean,
    near_duplicate_clean,
    pose_filter,
)
from .types import (
    EmbeddingStore,
    ImageRecord,
    Manifest,
    MergeCandidate,
    PoseLimits,
    StageReport,
)

__all__ = [
    "__version__",
    "EmbeddingFormatError",
    "EmbeddingStore",
    "EvalError",
    "FacecurateError",
    "ImageRecord",
    "Manifest",
    "ManifestError",
    "MergeCandidate",
    "PipelineConfig",
    "PipelineError",
    "PoseLimits",
    "RocCurve",
    "RunSummary",
    "ScoreSet",
    "StageError",
    "StageReport",
    "apply_merges",
    "assign_gender",
    "build_score_sets",
    "compare_runs",
    "cosine",
    "cross_subject_means",
    "filter_min_images",
    "generate_merge_candidates",
    "histogram",
    "load_embeddings",
    "load_manifest",
    "mean_similarity_ranking",
    "mislabel_clean",
    "near_duplicate_clean",
    "pose_filter",
    "resume_pipeline",
    "roc_curve",
    "run_pipeline",
    "threshold_at_fmr",
    "tpr_at_fmr",
    "write_embeddings",
    "write_manifest",
]
