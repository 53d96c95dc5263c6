import json
from dataclasses import dataclass, field

from refeed.analysis.metrics import normalize_answer
from refeed.corpus.store import Passage
from refeed.errors import TraceFormatError
from refeed.retrieval.bm25 import ScoredDoc

TRACE_SCHEMA_VERSION = 1

ORIGIN_GREEDY = "greedy"
ORIGIN_REFINED = "refined"


def sample_origin(j):
    return f"sample_{j}"


@dataclass(frozen=True)
class AnswerCandidate:
    text: str
    normalized: str
    origin: str
    mean_logprob: float = None
    raw_text: str = None

    @classmethod
    def create(cls, text, origin, mean_logprob=None, raw_text=None):
        return cls(text=text, normalized=normalize_answer(text), origin=origin, mean_logprob=mean_logprob, raw_text=raw_text)

    def to_record(self):
        return {
            "text": self.text,
            "normalized": self.normalized,
            "origin": self.origin,
            "mean_logprob": self.mean_logprob,
            "raw_text": self.raw_text,
        }

    @classmethod
    def from_record(cls, record):
        if record is None:
            return None
        return cls(**record)


@dataclass(frozen=True, eq=False)
class RetrievalPool:
    per_query: tuple = ()
    merged: tuple = ()
    passages: dict = field(default_factory=dict)

    @classmethod
    def empty(cls):
        return cls()

    @property
    def merged_passages(self):
        return [self.passages[d.passage_id] for d in self.merged]

    def to_record(self):
        return {
            "per_query": [
                {"query": query, "hits": [{"passage_id": d.passage_id, "score": d.score} for d in hits]}
                for query, hits in self.per_query
            ],
            "merged": [
                {**self.passages[d.passage_id].to_record(), "score": d.score}
                for d in self.merged
            ],
        }

    @classmethod
    def from_record(cls, record):
        per_query = tuple(
            (entry["query"], tuple(ScoredDoc(h["passage_id"], h["score"]) for h in entry["hits"]))
            for entry in record.get("per_query", [])
        )
        merged, passages = [], {}
        for entry in record.get("merged", []):
            merged.append(ScoredDoc(entry["id"], entry["score"]))
            passages[entry["id"]] = Passage.from_record(entry)
        return cls(per_query=per_query, merged=tuple(merged), passages=passages)


@dataclass(frozen=True, eq=False)
class PipelineTrace:
    """Replayable record of one question's run."""

    question_id: str
    mode: str
    candidates: tuple
    pool: RetrievalPool
    initial: AnswerCandidate
    refined: AnswerCandidate
    final: AnswerCandidate
    initial_ll: float = None
    refined_ll: float = None
    ensemble_applied: bool = False
    ensemble_note: str = None
    prompts: dict = field(default_factory=dict)

    def to_record(self):
        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "question_id": self.question_id,
            "mode": self.mode,
            "candidates": [c.to_record() for c in self.candidates],
            "pool": self.pool.to_record(),
            "initial": self.initial.to_record() if self.initial else None,
            "refined": self.refined.to_record() if self.refined else None,
            "final": self.final.to_record(),
            "initial_ll": self.initial_ll,
            "refined_ll": self.refined_ll,
            "ensemble_applied": self.ensemble_applied,
            "ensemble_note": self.ensemble_note,
            "prompts": dict(self.prompts),
        }

    def to_json(self):
        return json.dumps(self.to_record(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_record(cls, record):
        version = record.get("schema_version")
        if version != TRACE_SCHEMA_VERSION:
            raise TraceFormatError(f"Unsupported trace schema version {version}")
        return cls(
            question_id=record["question_id"],
            mode=record["mode"],
            candidates=tuple(AnswerCandidate.from_record(c) for c in record["candidates"]),
            pool=RetrievalPool.from_record(record["pool"]),
            initial=AnswerCandidate.from_record(record.get("initial")),
            refined=AnswerCandidate.from_record(record.get("refined")),
            final=AnswerCandidate.from_record(record["final"]),
            initial_ll=record.get("initial_ll"),
            refined_ll=record.get("refined_ll"),
            ensemble_applied=record.get("ensemble_applied", False),
            ensemble_note=record.get("ensemble_note"),
            prompts=record.get("prompts", {}),
        )


def read_traces(path):
    """Load traces written by the batch runner; failure records are skipped."""
    traces = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                record = json.loads(line)
                if "schema_version" in record:
                    traces.append(PipelineTrace.from_record(record))
    return traces
