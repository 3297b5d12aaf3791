"""Serving and study plumbing: completion API, session logging, analysis.

The loaded model is immutable after startup; completion requests are safe to
serve concurrently, while session appends are serialized through one lock.
"""

from __future__ import annotations

import json
import statistics
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from pydantic import BaseModel, Field, field_validator, model_validator

from .checkpoint import Checkpoint, load_checkpoint
from .corpus import tokenize
from .decoder import beam_decode
from .encoder import KeywordSequence

DEFAULT_BEAM_WIDTH = 5
DEFAULT_K = 3
DEFAULT_MAX_LEN = 20


class CompletionRequest(BaseModel):
    keywords: str = Field(min_length=1)
    k: int = DEFAULT_K
    beam_width: int | None = None

    @field_validator("keywords")
    @classmethod
    def _non_blank(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("keywords must be non-empty")
        return v

    @model_validator(mode="after")
    def _beam_bounds(self):
        width = self.beam_width if self.beam_width is not None else max(DEFAULT_BEAM_WIDTH, self.k)
        if not (1 <= self.k <= width):
            raise ValueError(f"need 1 <= k={self.k} <= beam_width={width}")
        return self


class Suggestion(BaseModel):
    sentence: str
    score: float


class CompletionResponse(BaseModel):
    suggestions: list[Suggestion]
    model_fingerprint: str
    latency_ms: float


class SessionRecord(BaseModel):
    session_id: str = Field(min_length=1)
    task_kind: str
    target: str
    user_input: str = Field(min_length=1)
    suggestions_shown: list[str] = Field(default_factory=list)
    equivalence_marks: list[bool] | None = None
    elapsed_seconds: float = Field(gt=0)
    timestamp: float = Field(default_factory=time.time)

    @field_validator("task_kind")
    @classmethod
    def _known_kind(cls, v: str) -> str:
        if v not in ("autocomplete", "writing"):
            raise ValueError(f"unknown task kind: {v}")
        return v

    @model_validator(mode="after")
    def _marks_only_for_autocomplete(self):
        if self.task_kind == "writing" and self.equivalence_marks is not None:
            raise ValueError("equivalence marks are only valid for autocomplete tasks")
        return self


@dataclass
class ModelBundle:
    """An immutable loaded model ready to serve completions."""

    checkpoint: Checkpoint
    encoder: object
    decoder: object

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "ModelBundle":
        encoder, decoder = ckpt.build_models()
        return cls(checkpoint=ckpt, encoder=encoder, decoder=decoder)

    @classmethod
    def from_path(cls, path) -> "ModelBundle":
        return cls.from_checkpoint(load_checkpoint(path))

    @property
    def vocab(self):
        return self.checkpoint.vocab

    @property
    def fingerprint(self) -> str:
        return self.checkpoint.fingerprint


def complete(bundle: ModelBundle, request: CompletionRequest) -> CompletionResponse:
    """Tokenize the keyword string, run beam search, detokenize suggestions."""
    from .corpus import detokenize

    start = time.monotonic()
    sent = tokenize(request.keywords)
    keywords = KeywordSequence(
        tokens=sent.tokens,
        ids=tuple(bundle.vocab.id_of(t) for t in sent.tokens),
        mask=tuple(1 for _ in sent.tokens),
    )
    width = request.beam_width if request.beam_width is not None else max(
        DEFAULT_BEAM_WIDTH, request.k
    )
    preds = beam_decode(
        bundle.decoder, keywords, bundle.vocab,
        beam_width=width, k=request.k, max_len=DEFAULT_MAX_LEN,
    )
    return CompletionResponse(
        suggestions=[
            Suggestion(sentence=detokenize(p.tokens), score=p.log_prob) for p in preds
        ],
        model_fingerprint=bundle.fingerprint,
        latency_ms=(time.monotonic() - start) * 1000.0,
    )


class SessionStore:
    """Append-only line-delimited session record store."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, record: SessionRecord) -> None:
        line = json.dumps(record.model_dump(), sort_keys=True)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()

    def records(self) -> list[SessionRecord]:
        if not self.path.exists():
            return []
        out = []
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    out.append(SessionRecord.model_validate(json.loads(line)))
        return out

    def by_session(self, session_id: str) -> list[SessionRecord]:
        return [r for r in self.records() if r.session_id == session_id]

    def export_lines(self) -> str:
        if not self.path.exists():
            return ""
        return self.path.read_text(encoding="utf-8")


def log_session(record: SessionRecord, store: SessionStore) -> None:
    store.append(record)


def _token_count(text: str) -> int:
    try:
        return len(tokenize(text))
    except Exception:
        return 0


def analyze_sessions(
    store_or_records,
    long_keyword_fraction: float = 0.2,
    short_writing_fraction: float = 0.2,
    time_sigma: float = 1.5,
) -> dict:
    """Apply the study filtering rules, then summarize timing and accuracy.

    Filters: (1) drop a session's autocomplete records when more than 20% of
    its keyword inputs are longer than their targets; (2) drop a session's
    writing records when more than 20% of typed sentences are shorter than
    half the target; (3) drop individual records with elapsed time more than
    1.5 standard deviations above that task's mean.
    """
    records = store_or_records.records() if isinstance(store_or_records, SessionStore) else list(
        store_or_records
    )
    by_session: dict[str, list[SessionRecord]] = {}
    for r in records:
        by_session.setdefault(r.session_id, []).append(r)

    surviving: list[SessionRecord] = []
    dropped_sessions = {"autocomplete": [], "writing": []}
    for sid, recs in by_session.items():
        auto = [r for r in recs if r.task_kind == "autocomplete"]
        writing = [r for r in recs if r.task_kind == "writing"]
        if auto:
            long_frac = sum(
                _token_count(r.user_input) > _token_count(r.target) for r in auto
            ) / len(auto)
            if long_frac > long_keyword_fraction:
                dropped_sessions["autocomplete"].append(sid)
            else:
                surviving.extend(auto)
        if writing:
            short_frac = sum(
                _token_count(r.user_input) < 0.5 * _token_count(r.target) for r in writing
            ) / len(writing)
            if short_frac > short_writing_fraction:
                dropped_sessions["writing"].append(sid)
            else:
                surviving.extend(writing)

    summary: dict = {"dropped_sessions": dropped_sessions, "tasks": {}}
    for kind in ("autocomplete", "writing"):
        recs = [r for r in surviving if r.task_kind == kind]
        trimmed = 0
        if len(recs) >= 2:
            mean = statistics.mean(r.elapsed_seconds for r in recs)
            std = statistics.pstdev(r.elapsed_seconds for r in recs)
            cutoff = mean + time_sigma * std
            before = len(recs)
            recs = [r for r in recs if r.elapsed_seconds <= cutoff]
            trimmed = before - len(recs)
        task: dict = {"n_records": len(recs), "n_trimmed_outliers": trimmed}
        if not recs:
            task["empty"] = True
        else:
            times = [r.elapsed_seconds for r in recs]
            task["mean_seconds"] = statistics.mean(times)
            task["variance_seconds"] = statistics.pvariance(times)
            if kind == "autocomplete":
                marked = [r for r in recs if r.equivalence_marks]
                task["top1_equivalence"] = (
                    sum(r.equivalence_marks[0] for r in marked) / len(marked) if marked else 0.0
                )
                task["top3_equivalence"] = (
                    sum(any(r.equivalence_marks) for r in marked) / len(marked)
                    if marked
                    else 0.0
                )
        summary["tasks"][kind] = task
    summary["n_sessions"] = len(by_session)
    summary["n_records_after_filters"] = sum(
        summary["tasks"][k]["n_records"] for k in summary["tasks"]
    )
    return summary


def create_app(model_path=None, bundle: ModelBundle | None = None, store_path=None):
    """Build the FastAPI application serving completions and session logging."""
    from fastapi import FastAPI, HTTPException
    from fastapi.responses import PlainTextResponse

    if bundle is None:
        if model_path is None:
            raise ValueError("need a model path or a preloaded bundle")
        bundle = ModelBundle.from_path(model_path)
    store = SessionStore(store_path if store_path is not None else "sessions.jsonl")
    app = FastAPI(title="kwac autocomplete service")
    started = time.monotonic()

    @app.post("/complete", response_model=CompletionResponse)
    def complete_endpoint(request: CompletionRequest):
        return complete(bundle, request)

    @app.post("/sessions")
    def log_session_endpoint(record: SessionRecord):
        try:
            log_session(record, store)
        except OSError as exc:
            raise HTTPException(status_code=503, detail=f"session store unavailable: {exc}")
        return {"ok": True, "session_id": record.session_id}

    @app.get("/sessions/export", response_class=PlainTextResponse)
    def export_endpoint():
        return store.export_lines()

    @app.get("/health")
    def health_endpoint():
        return {
            "model_fingerprint": bundle.fingerprint,
            "uptime_seconds": time.monotonic() - started,
        }

    app.state.bundle = bundle
    app.state.store = store
    return app
