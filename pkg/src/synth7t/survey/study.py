"""Blinded ranking studies: creation, persistence, submission and export.

A study shows raters one slice per query in k blinded variants and asks for
a full ranking under each criterion. Variant identities stay server-side
until export; raters only ever see per-query blinded labels. All writes go
to an append-only JSONL record log so a finished study can be audited or
replayed.
"""

from __future__ import annotations

import json
import string
import threading
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image

from ..nifti import read_nifti


class SurveyError(ValueError):
    pass


class ConflictError(SurveyError):
    """A differing ranking already exists for this (rater, query, criterion)."""


@dataclass
class StudyQuery:
    query_id: str
    subject_id: str
    axis: int
    slice_index: int
    labels: list  # blinded display labels, in display order
    label_to_variant: dict  # SECRET: blinded label -> true image type
    images: dict  # blinded label -> png path (relative to the image root)


@dataclass
class StudyDefinition:
    study_id: str
    criteria: list
    variants: list  # true image-type names, k of them
    seed: int
    queries: list = field(default_factory=list)

    @property
    def k(self):
        return len(self.variants)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, payload):
        queries = [StudyQuery(**q) for q in payload.pop("queries")]
        return cls(queries=queries, **payload)

    def public_query(self, query: StudyQuery, image_url):
        """Rater-facing view of a query: blinded labels only."""
        return {
            "query_id": query.query_id,
            "labels": list(query.labels),
            "images": [{"label": lab, "url": image_url(query.images[lab])}
                       for lab in query.labels],
        }


def _slice_extent(data, mask, axis):
    occupied = np.flatnonzero(
        (mask if mask is not None else data > 0).any(
            axis=tuple(i for i in range(3) if i != axis)
        )
    )
    if occupied.size == 0:
        raise SurveyError("volume has no foreground; cannot pick a slice")
    return int(occupied[0]), int(occupied[-1])


def _render_slice(data, axis, index, path):
    """Write one slice as an 8-bit PNG with a fixed [0, 1] window.

    The window is identical for every variant of a query, so rankings react
    to image content rather than display scaling.
    """
    plane = np.take(data, index, axis=axis)
    img = np.clip(plane, 0.0, 1.0)
    img8 = np.round(img * 255).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    # transpose so the first array axis runs vertically in the PNG
    Image.fromarray(img8.T, mode="L").save(path)


def create_study(image_manifest, n_queries: int, criteria: list, seed: int,
                 images_root, study_id: str | None = None) -> StudyDefinition:
    """Build a blinded study from a manifest of aligned variant volumes.

    The manifest (CSV path or DataFrame) has columns subject_id, variant,
    image_path and optionally mask_path; every subject must provide every
    variant. Each query picks a random subject, a random axis and a random
    in-brain slice, renders all k variants with identical windowing, and
    assigns a fresh blinded-label permutation.
    """
    if not criteria or any(not str(c).strip() for c in criteria):
        raise SurveyError("criteria must be nonempty prompts")
    if not isinstance(image_manifest, pd.DataFrame):
        image_manifest = pd.read_csv(image_manifest, dtype={"subject_id": str})
    variants = sorted(image_manifest["variant"].unique())
    k = len(variants)
    if k < 2:
        raise SurveyError(f"need at least 2 variants, got {variants}")
    if k > len(string.ascii_uppercase):
        raise SurveyError(f"too many variants ({k})")
    by_subject = {}
    for sid, group in image_manifest.groupby("subject_id"):
        have = dict(zip(group["variant"], group["image_path"]))
        missing = [v for v in variants if v not in have]
        if missing:
            raise SurveyError(f"subject {sid} is missing variants {missing}")
        masks = group["mask_path"].dropna().tolist() if "mask_path" in group else []
        by_subject[sid] = (have, masks[0] if masks else None)
    subjects = sorted(by_subject)
    if n_queries > len(subjects):
        raise SurveyError(f"{n_queries} queries requested but only {len(subjects)} subjects")

    rng = np.random.default_rng(seed)
    chosen = rng.choice(subjects, size=n_queries, replace=False)
    study_id = study_id or uuid.uuid4().hex[:12]
    study = StudyDefinition(study_id=study_id, criteria=[str(c) for c in criteria],
                            variants=variants, seed=seed)
    labels = list(string.ascii_uppercase[:k])
    for qi, sid in enumerate(chosen):
        paths, mask_path = by_subject[sid]
        axis = int(rng.integers(0, 3))
        ref, _ = read_nifti(paths[variants[0]])
        mask = None
        if mask_path is not None:
            m, _ = read_nifti(mask_path)
            mask = m > 0
        lo, hi = _slice_extent(ref, mask, axis)
        index = int(rng.integers(lo, hi + 1))
        perm = rng.permutation(k)
        label_to_variant = {labels[pos]: variants[perm[pos]] for pos in range(k)}
        query_id = f"q{qi:03d}"
        images = {}
        for lab in labels:
            data, _ = read_nifti(paths[label_to_variant[lab]])
            if data.shape != ref.shape:
                raise SurveyError(
                    f"subject {sid}: variant {label_to_variant[lab]} shape {data.shape} "
                    f"differs from {ref.shape}; variants must be aligned"
                )
            rel = f"{study_id}/{query_id}/{lab}.png"
            _render_slice(data, axis, index, Path(images_root) / rel)
            images[lab] = rel
        study.queries.append(
            StudyQuery(query_id=query_id, subject_id=str(sid), axis=axis, slice_index=index,
                       labels=list(labels), label_to_variant=label_to_variant, images=images)
        )
    return study


class SurveyStore:
    """Append-only JSONL store for studies and ranking submissions."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.studies: dict[str, StudyDefinition] = {}
        # (study_id, rater_id, query_id, criterion_index) -> {label: rank}
        self.submissions: dict[tuple, dict] = {}
        if self.path.exists():
            self._replay()

    def _replay(self):
        with open(self.path) as f:
            for line in f:
                if not line.strip():
                    continue
                record = json.loads(line)
                if record["event"] == "study_created":
                    study = StudyDefinition.from_dict(record["study"])
                    self.studies[study.study_id] = study
                elif record["event"] == "ranking_submitted":
                    key = (record["study_id"], record["rater_id"], record["query_id"],
                           record["criterion_index"])
                    self.submissions[key] = record["ranks"]

    def _append(self, record):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as f:
            f.write(json.dumps(record) + "\n")

    def add_study(self, study: StudyDefinition):
        with self._lock:
            if study.study_id in self.studies:
                raise SurveyError(f"study {study.study_id} already exists")
            self._append({"event": "study_created", "study": study.to_dict()})
            self.studies[study.study_id] = study

    def get_study(self, study_id) -> StudyDefinition:
        if study_id not in self.studies:
            raise SurveyError(f"unknown study {study_id}")
        return self.studies[study_id]

    def submit_ranking(self, study_id, rater_id, query_id, criterion_index, ranks) -> dict:
        """Persist one ranking. Exact duplicates are acknowledged without a
        second record; a differing resubmission is a conflict."""
        study = self.get_study(study_id)
        query = next((q for q in study.queries if q.query_id == query_id), None)
        if query is None:
            raise SurveyError(f"unknown query {query_id} in study {study_id}")
        if not 0 <= int(criterion_index) < len(study.criteria):
            raise SurveyError(f"criterion index {criterion_index} out of range")
        ranks = {str(k): int(v) for k, v in ranks.items()}
        if sorted(ranks) != sorted(query.labels):
            raise SurveyError(
                f"ranking must cover exactly the labels {query.labels}, got {sorted(ranks)}"
            )
        if sorted(ranks.values()) != list(range(1, study.k + 1)):
            raise SurveyError(
                f"ranks must be a permutation of 1..{study.k}, got {sorted(ranks.values())}"
            )
        key = (study_id, str(rater_id), query_id, int(criterion_index))
        with self._lock:
            existing = self.submissions.get(key)
            if existing is not None:
                if existing == ranks:
                    return {"accepted": True, "duplicate": True}
                raise ConflictError(
                    f"a different ranking for {key} is already recorded"
                )
            self._append({"event": "ranking_submitted", "study_id": study_id,
                          "rater_id": str(rater_id), "query_id": query_id,
                          "criterion_index": int(criterion_index), "ranks": ranks})
            self.submissions[key] = ranks
        return {"accepted": True, "duplicate": False}

    def tasks(self, study: StudyDefinition):
        """All (query, criterion) pairs, query-major: both criteria of a
        query are answered back to back."""
        return [(q, ci) for q in study.queries for ci in range(len(study.criteria))]

    def next_task(self, study_id, rater_id):
        """First unanswered (query, criterion_index) for this rater, or None."""
        study = self.get_study(study_id)
        for query, ci in self.tasks(study):
            if (study_id, str(rater_id), query.query_id, ci) not in self.submissions:
                return query, ci
        return None

    def progress(self, study_id, rater_id):
        study = self.get_study(study_id)
        total = len(study.queries) * len(study.criteria)
        done = sum(
            1 for q, ci in self.tasks(study)
            if (study_id, str(rater_id), q.query_id, ci) in self.submissions
        )
        return done, total

    def raters(self, study_id):
        return sorted({key[1] for key in self.submissions if key[0] == study_id})

    def export_ranks(self, study_id, include_incomplete: bool = False) -> pd.DataFrame:
        """Unblinded rank table: one row per (rater, query, criterion, image type).

        Raters with unfinished sessions are dropped unless explicitly
        included. Deterministic replay of the record log yields an identical
        table.
        """
        study = self.get_study(study_id)
        total = len(study.queries) * len(study.criteria)
        rows = []
        any_submission = False
        for rater in self.raters(study_id):
            done, _ = self.progress(study_id, rater)
            if done == 0:
                continue
            any_submission = True
            if done < total and not include_incomplete:
                continue
            for query in study.queries:
                for ci in range(len(study.criteria)):
                    ranks = self.submissions.get((study_id, rater, query.query_id, ci))
                    if ranks is None:
                        continue
                    for label, rank in ranks.items():
                        rows.append({
                            "rater": rater,
                            "query": query.query_id,
                            "criterion": study.criteria[ci],
                            "image_type": query.label_to_variant[label],
                            "rank": rank,
                        })
        if not any_submission:
            raise SurveyError(f"study {study_id} has no submissions to export")
        return pd.DataFrame(rows, columns=["rater", "query", "criterion", "image_type", "rank"])
