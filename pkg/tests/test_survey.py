import itertools
import json

import numpy as np
import pandas as pd
import pytest
from fastapi.testclient import TestClient
from scipy import stats as sps

from synth7t.nifti import write_nifti
from synth7t.survey import ConflictError, SurveyError, SurveyStore, create_app, create_study

VARIANTS = ["3T", "7T", "unet7T", "gan7T", "watnet7T", "vnet7T"]


def write_variant_volumes(tmp_path, shape=(16, 16, 6)):
    rng = np.random.default_rng(0)
    paths = {}
    for i, variant in enumerate(VARIANTS):
        data = np.clip(rng.random(shape) * 0.5 + i * 0.08, 0, 1).astype(np.float32)
        path = tmp_path / f"{variant}.nii.gz"
        write_nifti(path, data)
        paths[variant] = str(path)
    return paths


def make_manifest(tmp_path, n_subjects=28):
    """All subjects share the same aligned variant files (content does not
    matter for protocol tests)."""
    paths = write_variant_volumes(tmp_path)
    rows = []
    for i in range(n_subjects):
        for variant in VARIANTS:
            rows.append({"subject_id": f"s{i:03d}", "variant": variant,
                         "image_path": paths[variant]})
    return pd.DataFrame(rows)


CRITERIA = ["Rank based on how good the image looks.",
            "Rank based on how detailed the image is."]


@pytest.fixture
def study_env(tmp_path):
    manifest = make_manifest(tmp_path)
    images = tmp_path / "images"
    study = create_study(manifest, n_queries=28, criteria=CRITERIA, seed=0,
                         images_root=images)
    store = SurveyStore(tmp_path / "store.jsonl")
    store.add_study(study)
    return study, store, images, manifest


def playback_rankings(study, preference):
    """Ground-truth rankings per (rater, query, criterion) in true-variant
    terms; ``preference`` orders the variants best-to-worst per rater."""
    truth = {}
    for rater, order in preference.items():
        rank_of = {variant: i + 1 for i, variant in enumerate(order)}
        for query in study.queries:
            for ci in range(len(study.criteria)):
                truth[(rater, query.query_id, ci)] = dict(rank_of)
    return truth


def submit_playback(store, study, truth):
    for (rater, query_id, ci), variant_ranks in truth.items():
        query = next(q for q in study.queries if q.query_id == query_id)
        ranks = {label: variant_ranks[query.label_to_variant[label]]
                 for label in query.labels}
        store.submit_ranking(study.study_id, rater, query_id, ci, ranks)


class TestCreateStudy:
    def test_published_protocol_shape(self, study_env, tmp_path):
        study, _, images, _ = study_env
        assert len(study.queries) == 28
        assert study.k == 6
        for query in study.queries:
            assert sorted(query.labels) == list("ABCDEF")
            assert sorted(query.label_to_variant.values()) == sorted(VARIANTS)
            for label in query.labels:
                assert (images / query.images[label]).exists()

    def test_seed_determinism(self, tmp_path):
        manifest = make_manifest(tmp_path)
        a = create_study(manifest, 10, CRITERIA, seed=5, images_root=tmp_path / "a")
        b = create_study(manifest, 10, CRITERIA, seed=5, images_root=tmp_path / "b")
        assert [q.subject_id for q in a.queries] == [q.subject_id for q in b.queries]
        assert [q.label_to_variant for q in a.queries] == [q.label_to_variant for q in b.queries]
        assert [(q.axis, q.slice_index) for q in a.queries] == \
               [(q.axis, q.slice_index) for q in b.queries]

    def test_display_positions_uniform(self, tmp_path):
        manifest = make_manifest(tmp_path, n_subjects=400)
        study = create_study(manifest, 400, CRITERIA, seed=123, images_root=tmp_path / "imgs")
        counts = np.zeros((6, 6))
        variant_index = {v: i for i, v in enumerate(sorted(VARIANTS))}
        for query in study.queries:
            for pos, label in enumerate(query.labels):
                counts[variant_index[query.label_to_variant[label]], pos] += 1
        chi2 = ((counts - 400 / 6) ** 2 / (400 / 6)).sum()
        p = sps.chi2.sf(chi2, df=35)
        assert p > 1e-3

    def test_missing_variant_named_in_error(self, tmp_path):
        manifest = make_manifest(tmp_path)
        broken = manifest[~((manifest.subject_id == "s003") & (manifest.variant == "7T"))]
        with pytest.raises(SurveyError, match="s003.*7T"):
            create_study(broken, 5, CRITERIA, seed=0, images_root=tmp_path / "x")

    def test_too_many_queries(self, tmp_path):
        manifest = make_manifest(tmp_path, n_subjects=3)
        with pytest.raises(SurveyError):
            create_study(manifest, 5, CRITERIA, seed=0, images_root=tmp_path / "x")

    def test_empty_criteria_rejected(self, tmp_path):
        manifest = make_manifest(tmp_path, n_subjects=3)
        with pytest.raises(SurveyError):
            create_study(manifest, 2, [" "], seed=0, images_root=tmp_path / "x")

    def test_identical_windowing_renders_8bit(self, study_env):
        study, _, images, _ = study_env
        from PIL import Image

        query = study.queries[0]
        sizes = set()
        for label in query.labels:
            img = Image.open(images / query.images[label])
            assert img.mode == "L"
            sizes.add(img.size)
        assert len(sizes) == 1  # same slice geometry for every variant


class TestSubmission:
    def test_accept_and_idempotent(self, study_env):
        study, store, _, _ = study_env
        query = study.queries[0]
        ranks = {label: i + 1 for i, label in enumerate(query.labels)}
        ack1 = store.submit_ranking(study.study_id, "rater1", query.query_id, 0, ranks)
        ack2 = store.submit_ranking(study.study_id, "rater1", query.query_id, 0, ranks)
        assert ack1["accepted"] and ack2["accepted"] and ack2["duplicate"]
        with open(store.path) as f:
            events = [json.loads(line) for line in f]
        assert sum(e["event"] == "ranking_submitted" for e in events) == 1

    def test_non_permutation_rejected(self, study_env):
        study, store, _, _ = study_env
        query = study.queries[0]
        bad = {label: 1 for label in query.labels}  # repeated rank
        with pytest.raises(SurveyError):
            store.submit_ranking(study.study_id, "r", query.query_id, 0, bad)
        partial = {label: i + 1 for i, label in enumerate(query.labels[:-1])}
        with pytest.raises(SurveyError):
            store.submit_ranking(study.study_id, "r", query.query_id, 0, partial)

    def test_conflicting_resubmission(self, study_env):
        study, store, _, _ = study_env
        query = study.queries[0]
        ranks = {label: i + 1 for i, label in enumerate(query.labels)}
        store.submit_ranking(study.study_id, "r", query.query_id, 0, ranks)
        flipped = dict(ranks)
        labels = query.labels
        flipped[labels[0]], flipped[labels[1]] = flipped[labels[1]], flipped[labels[0]]
        with pytest.raises(ConflictError):
            store.submit_ranking(study.study_id, "r", query.query_id, 0, flipped)

    def test_progress_cursor(self, study_env):
        study, store, _, _ = study_env
        assert store.progress(study.study_id, "r9") == (0, 56)
        query, ci = store.next_task(study.study_id, "r9")
        assert (query.query_id, ci) == ("q000", 0)
        ranks = {label: i + 1 for i, label in enumerate(query.labels)}
        store.submit_ranking(study.study_id, "r9", query.query_id, ci, ranks)
        query2, ci2 = store.next_task(study.study_id, "r9")
        assert (query2.query_id, ci2) == ("q000", 1)  # second criterion of same query


class TestExport:
    def full_playback(self, study, store):
        orders = [list(p) for p in itertools.islice(itertools.permutations(VARIANTS), 4)]
        preference = {f"rater{i}": orders[i] for i in range(4)}
        truth = playback_rankings(study, preference)
        submit_playback(store, study, truth)
        return preference, truth

    def test_row_count_four_raters_two_criteria(self, study_env):
        study, store, _, _ = study_env
        self.full_playback(study, store)
        table = store.export_ranks(study.study_id)
        assert len(table) == 4 * 28 * 2 * 6

    def test_round_trip_matches_ground_truth(self, study_env):
        study, store, _, _ = study_env
        _, truth = self.full_playback(study, store)
        table = store.export_ranks(study.study_id)
        for row in table.itertuples(index=False):
            ci = study.criteria.index(row.criterion)
            assert truth[(row.rater, row.query, ci)][row.image_type] == row.rank

    def test_empty_study_export_rejected(self, study_env):
        study, store, _, _ = study_env
        with pytest.raises(SurveyError):
            store.export_ranks(study.study_id)

    def test_incomplete_rater_dropped_unless_flagged(self, study_env):
        study, store, _, _ = study_env
        self.full_playback(study, store)
        query = study.queries[0]
        ranks = {label: i + 1 for i, label in enumerate(query.labels)}
        store.submit_ranking(study.study_id, "straggler", query.query_id, 0, ranks)
        table = store.export_ranks(study.study_id)
        assert "straggler" not in set(table["rater"])
        flagged = store.export_ranks(study.study_id, include_incomplete=True)
        assert "straggler" in set(flagged["rater"])

    def test_replay_from_disk_identical(self, study_env, tmp_path):
        study, store, _, _ = study_env
        self.full_playback(study, store)
        reopened = SurveyStore(store.path)
        pd.testing.assert_frame_equal(store.export_ranks(study.study_id),
                                      reopened.export_ranks(study.study_id))


class TestHttpApi:
    @pytest.fixture
    def client(self, tmp_path):
        manifest = make_manifest(tmp_path, n_subjects=6)
        manifest_path = tmp_path / "manifest.csv"
        manifest.to_csv(manifest_path, index=False)
        app = create_app(tmp_path / "store.jsonl", tmp_path / "images")
        client = TestClient(app)
        created = client.post("/studies", json={
            "manifest_path": str(manifest_path), "n_queries": 3,
            "criteria": CRITERIA, "seed": 0, "study_id": "webstudy"})
        assert created.status_code == 200, created.text
        return client

    def rank_body(self, payload, offset=0):
        labels = [img["label"] for img in payload["images"]]
        ranks = {label: ((i + offset) % len(labels)) + 1 for i, label in enumerate(labels)}
        return {"query_id": payload["query_id"],
                "criterion_index": payload["criterion_index"], "ranks": ranks}

    def test_full_rater_flow_and_blinding(self, client):
        seen_texts = []
        done = False
        steps = 0
        while not done:
            payload = client.get("/studies/webstudy/raters/alice/next").json()
            seen_texts.append(json.dumps(payload))
            if payload["done"]:
                done = True
                break
            assert payload["criterion"] in CRITERIA
            assert len(payload["images"]) == 6
            for img in payload["images"]:
                png = client.get(img["url"])
                assert png.status_code == 200
                assert png.headers["content-type"] == "image/png"
            ack = client.post("/studies/webstudy/raters/alice/rankings",
                              json=self.rank_body(payload))
            seen_texts.append(json.dumps(ack.json()))
            assert ack.status_code == 200
            steps += 1
        assert steps == 3 * 2
        # blinding: no rater-facing payload ever names a true image type
        blob = "\n".join(seen_texts)
        for variant in VARIANTS:
            assert variant not in blob

    def test_resume_uses_server_cursor(self, client):
        first = client.get("/studies/webstudy/raters/bob/next").json()
        client.post("/studies/webstudy/raters/bob/rankings", json=self.rank_body(first))
        again = client.get("/studies/webstudy/raters/bob/next").json()
        assert (again["query_id"], again["criterion_index"]) == (first["query_id"], 1)
        assert again["completed"] == 1 and again["total"] == 6

    def test_conflict_and_validation_status_codes(self, client):
        payload = client.get("/studies/webstudy/raters/carol/next").json()
        body = self.rank_body(payload)
        assert client.post("/studies/webstudy/raters/carol/rankings", json=body).status_code == 200
        conflicting = self.rank_body(payload, offset=1)
        r = client.post("/studies/webstudy/raters/carol/rankings", json=conflicting)
        assert r.status_code == 409
        bad = dict(body, ranks={k: 1 for k in body["ranks"]})
        r = client.post("/studies/webstudy/raters/carol/rankings", json=bad)
        assert r.status_code == 422

    def test_export_csv(self, client):
        for rater in ("dave",):
            while True:
                payload = client.get(f"/studies/webstudy/raters/{rater}/next").json()
                if payload["done"]:
                    break
                client.post(f"/studies/webstudy/raters/{rater}/rankings",
                            json=self.rank_body(payload))
        resp = client.get("/studies/webstudy/export.csv")
        assert resp.status_code == 200
        table = pd.read_csv(pd.io.common.StringIO(resp.text))
        dave = table[table["rater"] == "dave"]
        assert len(dave) == 3 * 2 * 6
        assert set(dave["image_type"]) == set(VARIANTS)

    def test_unknown_study_404(self, client):
        assert client.get("/studies/nope/raters/x/next").status_code == 404
