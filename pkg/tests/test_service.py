import json

import pytest
import torch
from fastapi.testclient import TestClient
from pydantic import ValidationError

from kwac.checkpoint import Checkpoint
from kwac.corpus import build_vocabulary, tokenize
from kwac.decoder import KeywordDecoder
from kwac.encoder import KeywordEncoder
from kwac.service import (
    CompletionRequest,
    ModelBundle,
    SessionRecord,
    SessionStore,
    analyze_sessions,
    complete,
    create_app,
    log_session,
)


@pytest.fixture(scope="module")
def bundle():
    vocab = build_vocabulary(
        [tokenize(l) for l in ["the red dog ran home", "the blue cat sat down"]]
    )
    torch.manual_seed(2)
    encoder = KeywordEncoder(len(vocab), 8, 8)
    decoder = KeywordDecoder(len(vocab), 8, 8)
    ckpt = Checkpoint.from_models(
        encoder, decoder, vocab, hyperparams={"emb_dim": 8, "hidden": 8}
    )
    return ModelBundle.from_checkpoint(ckpt)


def _record(**kw):
    base = dict(
        session_id="s1",
        task_kind="autocomplete",
        target="The red dog ran home.",
        user_input="red dog",
        suggestions_shown=["The red dog ran home."],
        equivalence_marks=[True],
        elapsed_seconds=4.2,
    )
    base.update(kw)
    return SessionRecord(**base)


class TestCompletionRequest:
    def test_blank_keywords_rejected(self):
        with pytest.raises(ValidationError):
            CompletionRequest(keywords="   ")

    def test_k_beyond_beam_rejected(self):
        with pytest.raises(ValidationError):
            CompletionRequest(keywords="dog", k=4, beam_width=2)

    def test_k_beyond_default_width_grows_beam(self):
        req = CompletionRequest(keywords="dog", k=9)
        assert req.k == 9 and req.beam_width is None


class TestComplete:
    def test_contract(self, bundle):
        resp = complete(bundle, CompletionRequest(keywords="red dog", k=3))
        assert len(resp.suggestions) == 3
        scores = [s.score for s in resp.suggestions]
        assert scores == sorted(scores, reverse=True)
        assert all(s.score <= 0 for s in resp.suggestions)
        assert resp.model_fingerprint == bundle.fingerprint
        assert resp.latency_ms >= 0

    def test_oov_keywords_survive(self, bundle):
        resp = complete(bundle, CompletionRequest(keywords="zyxqux", k=1, beam_width=1))
        assert len(resp.suggestions) == 1


class TestSessionRecord:
    def test_valid_autocomplete(self):
        assert _record().task_kind == "autocomplete"

    def test_writing_with_marks_rejected(self):
        with pytest.raises(ValidationError):
            _record(task_kind="writing", equivalence_marks=[True])

    def test_writing_without_marks_ok(self):
        r = _record(task_kind="writing", equivalence_marks=None)
        assert r.equivalence_marks is None

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            _record(task_kind="dictation")

    def test_nonpositive_elapsed_rejected(self):
        with pytest.raises(ValidationError):
            _record(elapsed_seconds=0.0)

    def test_empty_input_rejected(self):
        with pytest.raises(ValidationError):
            _record(user_input="")


class TestSessionStore:
    def test_append_and_reload(self, tmp_path):
        path = tmp_path / "sessions.jsonl"
        store = SessionStore(path)
        log_session(_record(), store)
        log_session(_record(session_id="s2"), store)
        # durability: a brand-new store over the same file sees both records
        reopened = SessionStore(path)
        records = reopened.records()
        assert [r.session_id for r in records] == ["s1", "s2"]
        assert len(reopened.by_session("s2")) == 1

    def test_missing_file_is_empty(self, tmp_path):
        store = SessionStore(tmp_path / "never.jsonl")
        assert store.records() == [] and store.export_lines() == ""

    def test_export_is_valid_jsonl(self, tmp_path):
        store = SessionStore(tmp_path / "s.jsonl")
        store.append(_record())
        lines = store.export_lines().splitlines()
        assert len(lines) == 1
        assert json.loads(lines[0])["session_id"] == "s1"


class TestAnalysis:
    def test_empty_input(self):
        summary = analyze_sessions([])
        assert summary["tasks"]["autocomplete"]["empty"]
        assert summary["tasks"]["writing"]["empty"]
        assert summary["n_records_after_filters"] == 0

    def test_long_keyword_sessions_dropped_at_boundary(self):
        """11 long inputs out of 50 (22%) crosses the >20% filter; 10/50 does not."""
        def session(sid, n_long):
            recs = []
            for i in range(50):
                long = i < n_long
                recs.append(
                    _record(
                        session_id=sid,
                        user_input="very long keyword input indeed" if long else "dog",
                        target="short target",
                        elapsed_seconds=5.0,
                    )
                )
            return recs

        summary = analyze_sessions(session("over", 11) + session("under", 10))
        assert summary["dropped_sessions"]["autocomplete"] == ["over"]
        assert summary["tasks"]["autocomplete"]["n_records"] == 50

    def test_short_writing_sessions_dropped(self):
        recs = [
            _record(
                session_id="w", task_kind="writing", equivalence_marks=None,
                user_input="ok" if i < 2 else "a full length sentence here",
                target="a full length sentence here", elapsed_seconds=5.0,
            )
            for i in range(5)
        ]
        summary = analyze_sessions(recs)
        assert summary["dropped_sessions"]["writing"] == ["w"]
        assert summary["tasks"]["writing"].get("empty", False)

    def test_time_outliers_trimmed(self):
        recs = [_record(session_id=f"s{i}", elapsed_seconds=5.0) for i in range(10)]
        recs.append(_record(session_id="slow", elapsed_seconds=500.0))
        summary = analyze_sessions(recs)
        task = summary["tasks"]["autocomplete"]
        assert task["n_trimmed_outliers"] == 1
        assert task["n_records"] == 10
        assert task["mean_seconds"] == pytest.approx(5.0)

    def test_equivalence_rates(self):
        recs = [
            _record(session_id="a", equivalence_marks=[True, False, False]),
            _record(session_id="b", equivalence_marks=[False, True, False]),
            _record(session_id="c", equivalence_marks=[False, False, False]),
            _record(session_id="d", equivalence_marks=[True, True, False]),
        ]
        task = analyze_sessions(recs)["tasks"]["autocomplete"]
        assert task["top1_equivalence"] == pytest.approx(0.5)
        assert task["top3_equivalence"] == pytest.approx(0.75)


class TestApp:
    @pytest.fixture()
    def client(self, bundle, tmp_path):
        app = create_app(bundle=bundle, store_path=tmp_path / "sessions.jsonl")
        return TestClient(app)

    def test_health(self, client, bundle):
        resp = client.get("/health")
        assert resp.status_code == 200
        assert resp.json()["model_fingerprint"] == bundle.fingerprint

    def test_complete_endpoint(self, client):
        resp = client.post("/complete", json={"keywords": "red dog", "k": 2})
        assert resp.status_code == 200
        body = resp.json()
        assert len(body["suggestions"]) == 2
        assert "model_fingerprint" in body

    def test_complete_validation_error(self, client):
        resp = client.post("/complete", json={"keywords": "  "})
        assert resp.status_code == 422

    def test_session_round_trip(self, client):
        record = _record().model_dump()
        resp = client.post("/sessions", json=record)
        assert resp.status_code == 200 and resp.json()["ok"]
        export = client.get("/sessions/export")
        assert export.status_code == 200
        assert json.loads(export.text.splitlines()[0])["session_id"] == "s1"

    def test_missing_bundle_and_path(self):
        with pytest.raises(ValueError):
            create_app()
