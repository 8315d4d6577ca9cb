"""Subject gender assignment from per-image predictor votes."""
from __future__ import annotations

from .types import Manifest


def assign_gender(manifest: Manifest, agreement: float = 0.75) -> Manifest:
    """Assign a gender label to every subject from its per-image votes.

    A subject gets "male" or "female" when that label covers at least
    ``agreement`` of the subject's non-unknown votes; anything else
    (including all-unknown subjects and exact ties) is "needs_review" and
    goes to a human. Unknown votes are excluded from the denominator: they
    are ingestion artifacts, not predictor disagreement.
    """
    labels: dict[str, str] = {}
    for subject, positions in manifest.subjects.items():
        male = 0
        female = 0
        for pos in positions:
            vote = manifest.records[pos].gender_vote
            if vote == "male":
                male += 1
            elif vote == "female":
                female += 1
        total = male + female
        if total == 0 or male == female:
            labels[subject] = "needs_review"
            continue
        winner, count = ("male", male) if male > female else ("female", female)
        labels[subject] = winner if count >= agreement * total else "needs_review"
    return manifest.with_gender_labels(labels)


def unresolved_subjects(manifest: Manifest) -> list[str]:
    """Subjects whose label is missing or needs_review, sorted."""
    return sorted(
        subject
        for subject in manifest.subjects
        if manifest.gender_labels.get(subject, "needs_review") == "needs_review"
    )
