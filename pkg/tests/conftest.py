"""Shared fixtures: tiny manifest/store builders and the synthetic corpus.

The synthetic corpus plants every defect class the pipeline targets:
mislabeled images drawn from other identities' clusters, near-duplicate
perturbations, and split identities sharing one cluster. Ground truth is
returned alongside so tests can score removals against what was planted.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pytest

from facecurate import EmbeddingStore, ImageRecord, Manifest


def make_store(vectors) -> EmbeddingStore:
    arr = np.asarray(vectors, dtype=np.float64)
    arr = arr / np.linalg.norm(arr, axis=1, keepdims=True)
    return EmbeddingStore(vectors=arr.astype(np.float32))


def make_records(subject_sizes: dict[str, int], **kwargs) -> list[ImageRecord]:
    """One record per image, embedding indices assigned in order."""
    records = []
    idx = 0
    for subject in subject_sizes:
        for i in range(subject_sizes[subject]):
            records.append(
                ImageRecord(
                    image_id=f"{subject}_{i:04d}",
                    subject_id=subject,
                    embedding_index=idx,
                    roll=kwargs.get("roll", 0.0),
                    pitch=kwargs.get("pitch", 0.0),
                    yaw=kwargs.get("yaw", 0.0),
                    gender_vote=kwargs.get("gender_vote", "unknown"),
                    source_path=f"{subject}/{subject}_{i:04d}.png",
                )
            )
            idx += 1
    return records


def random_unit(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    vecs = rng.normal(size=(n, dim))
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


def spread_centers(
    rng: np.random.Generator, n: int, dim: int, max_cos: float = 0.2
) -> np.ndarray:
    """Random unit centers kept mutually dissimilar by rejection sampling.

    The gate relaxes slightly when a draw stalls, so dense packings (n close
    to or above dim) still terminate deterministically.
    """
    centers = np.empty((n, dim))
    count = 0
    gate = max_cos
    attempts = 0
    while count < n:
        cand = random_unit(rng, 1, dim)[0]
        attempts += 1
        if count == 0 or np.max(np.abs(centers[:count] @ cand)) < gate:
            centers[count] = cand
            count += 1
            attempts = 0
        elif attempts > 2000:
            gate *= 1.05
            attempts = 0
    return centers


def cluster_images(
    rng: np.random.Generator, center: np.ndarray, n: int, intra_mean: float
) -> np.ndarray:
    """Unit images whose pairwise cosine concentrates around intra_mean."""
    noise = random_unit(rng, n, center.size)
    vecs = np.sqrt(intra_mean) * center + np.sqrt(1.0 - intra_mean) * noise
    return vecs / np.linalg.norm(vecs, axis=1, keepdims=True)


@dataclass
class SyntheticCorpus:
    manifest: Manifest
    store: EmbeddingStore
    planted_mislabels: set[str] = field(default_factory=set)
    planted_duplicates: set[str] = field(default_factory=set)
    split_pairs: list[tuple[str, str]] = field(default_factory=list)
    gender_of: dict[str, str] = field(default_factory=dict)


def build_synthetic_corpus(
    n_identities: int = 200,
    dim: int = 128,
    images_range: tuple[int, int] = (30, 50),
    intra_range: tuple[float, float] = (0.70, 0.95),
    mislabel_rate: float = 0.05,
    near_dup_rate: float = 0.10,
    n_split_pairs: int = 4,
    seed: int = 20240501,
) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)
    n_clusters = n_identities - n_split_pairs
    centers = spread_centers(rng, n_clusters, dim)

    # The last n_split_pairs identities reuse the first clusters, giving each
    # of those clusters two subject labels (a split identity).
    cluster_of = list(range(n_clusters)) + list(range(n_split_pairs))
    intra = rng.uniform(*intra_range, size=n_identities)
    sizes = rng.integers(images_range[0], images_range[1] + 1, size=n_identities)

    split_pairs = []
    gender_of = {}
    records: list[ImageRecord] = []
    vectors: list[np.ndarray] = []
    planted_mislabels: set[str] = set()
    planted_duplicates: set[str] = set()

    for ident in range(n_identities):
        subject = f"s{ident:04d}"
        # Split twins share their source identity's gender so a verified
        # merge never produces conflicting labels.
        gender_of[subject] = (
            gender_of[f"s{cluster_of[ident]:04d}"]
            if ident >= n_clusters
            else ("male" if ident % 2 == 0 else "female")
        )
        if ident >= n_clusters:
            split_pairs.append((f"s{cluster_of[ident]:04d}", subject))

        n_images = int(sizes[ident])
        n_mislabeled = max(1, round(mislabel_rate * n_images)) if mislabel_rate > 0 else 0
        n_dups = max(1, round(near_dup_rate * n_images)) if near_dup_rate > 0 else 0
        n_base = n_images - n_mislabeled - n_dups

        imgs = cluster_images(rng, centers[cluster_of[ident]], n_base, intra[ident])
        rows = [imgs[i] for i in range(n_base)]
        # Near-duplicates perturb a base image to an exact target cosine by
        # mixing in noise orthogonal to the base.
        for d in range(n_dups):
            base = rows[int(rng.integers(0, n_base))]
            target = rng.uniform(0.955, 0.995)
            noise = random_unit(rng, 1, dim)[0]
            noise -= (noise @ base) * base
            noise /= np.linalg.norm(noise)
            rows.append(target * base + np.sqrt(1 - target**2) * noise)
        # Mislabels come from some other identity's cluster.
        foreign_choices = [
            c for c in range(n_clusters) if c != cluster_of[ident]
        ]
        for m in range(n_mislabeled):
            foreign = foreign_choices[int(rng.integers(0, len(foreign_choices)))]
            rows.append(cluster_images(rng, centers[foreign], 1, float(rng.uniform(0.75, 0.9)))[0])

        for i, vec in enumerate(rows):
            image_id = f"{subject}_i{i:04d}"
            if i >= n_base + n_dups:
                planted_mislabels.add(image_id)
            elif i >= n_base:
                planted_duplicates.add(image_id)
            records.append(
                ImageRecord(
                    image_id=image_id,
                    subject_id=subject,
                    embedding_index=len(vectors),
                    roll=float(rng.uniform(-12, 12)),
                    pitch=float(rng.uniform(-12, 12)),
                    yaw=float(rng.uniform(-12, 12)),
                    gender_vote=gender_of[subject],
                    source_path=f"{subject}/{image_id}.png",
                )
            )
            vectors.append(vec)

    matrix = np.asarray(vectors)
    matrix = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
    return SyntheticCorpus(
        manifest=Manifest.from_records(records),
        store=EmbeddingStore(vectors=matrix.astype(np.float32)),
        planted_mislabels=planted_mislabels,
        planted_duplicates=planted_duplicates,
        split_pairs=split_pairs,
        gender_of=gender_of,
    )


def corpus_to_disk(corpus: SyntheticCorpus, directory) -> tuple[str, str]:
    """Write manifest + embeddings files; returns their paths."""
    from facecurate import write_embeddings, write_manifest

    manifest_path = str(directory / "manifest.csv")
    embeddings_path = str(directory / "embeddings.fceb")
    write_manifest(corpus.manifest, manifest_path)
    write_embeddings(corpus.store.vectors, embeddings_path)
    return manifest_path, embeddings_path


def ground_truth_decisions(corpus: SyntheticCorpus, candidates) -> list:
    """Decide planted split pairs same_person, everything else different."""
    split = {tuple(sorted(pair)) for pair in corpus.split_pairs}
    return [
        cand.decided(
            "same_person" if cand.pair in split else "different_person",
            decided_by="oracle",
        )
        for cand in candidates
    ]


@pytest.fixture(scope="session")
def synthetic_corpus() -> SyntheticCorpus:
    return build_synthetic_corpus()


@pytest.fixture(scope="session")
def small_corpus() -> SyntheticCorpus:
    """A 24-identity corpus for pipeline tests that need speed over scale."""
    return build_synthetic_corpus(
        n_identities=24,
        dim=64,
        images_range=(14, 22),
        n_split_pairs=2,
        seed=777,
    )
