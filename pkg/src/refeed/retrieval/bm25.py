"""
From-scratch BM25 inverted index over corpus passages.

Scores use the non-negative IDF form ln(1 + (N - df + 0.5) / (df + 0.5)), so
every returned score is > 0 and scores from different queries against the
same index can be compared directly.
"""
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from refeed.errors import EmptyCorpusError, IndexFormatError, PreconditionError

logger = logging.getLogger(__name__)

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
INDEX_FILE = "bm25_index.json"
INDEX_MAGIC = "REFEED-BM25"
INDEX_VERSION = 1

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text):
    """Lowercase and split on every non-alphanumeric character (letters of any script count)."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class ScoredDoc:
    passage_id: str
    score: float


class Bm25Index:
    """
    Immutable inverted index.

    Rows are passage ids in ascending order; postings hold (row, tf) pairs
    sorted by row, which is the same as sorting by passage id.
    """

    def __init__(self, doc_ids, doc_lengths, postings, k1=DEFAULT_K1, b=DEFAULT_B):
        self.k1 = float(k1)
        self.b = float(b)
        self.doc_ids = list(doc_ids)
        self._row_of = {pid: row for row, pid in enumerate(self.doc_ids)}
        self._doc_len = np.asarray(doc_lengths, dtype=np.float64)
        self.num_docs = len(self.doc_ids)
        self.avg_doc_length = float(self._doc_len.mean()) if self.num_docs else 0.0

        self._postings = {}
        for term, entries in postings.items():
            rows = np.fromiter((row for row, _ in entries), dtype=np.int64, count=len(entries))
            tfs = np.fromiter((tf for _, tf in entries), dtype=np.float64, count=len(entries))
            self._postings[term] = (rows, tfs)

        # Per-document length normalisation, shared by every query.
        if self.avg_doc_length > 0:
            self._norm = self.k1 * (1.0 - self.b + self.b * self._doc_len / self.avg_doc_length)
        else:
            self._norm = np.full(self.num_docs, self.k1 * (1.0 - self.b))

    @classmethod
    def build(cls, passages, k1=DEFAULT_K1, b=DEFAULT_B):
        """Index every passage; passages that tokenize to nothing get length 0 and no postings."""
        token_counts = {}
        for passage in passages:
            if passage.id in token_counts:
                raise PreconditionError(f"Duplicate passage id '{passage.id}'")
            token_counts[passage.id] = Counter(tokenize(passage.text))
        if not token_counts:
            raise EmptyCorpusError("Cannot build an index over an empty corpus")

        doc_ids = sorted(token_counts)
        doc_lengths = []
        postings = {}
        for row, pid in enumerate(doc_ids):
            counts = token_counts[pid]
            doc_lengths.append(sum(counts.values()))
            for term, tf in counts.items():
                postings.setdefault(term, []).append((row, tf))

        index = cls(doc_ids, doc_lengths, postings, k1=k1, b=b)
        logger.info(f"Built BM25 index: {index.num_docs} passages, {len(postings)} terms, avgdl={index.avg_doc_length:.2f}")
        return index

    @property
    def doc_lengths(self):
        return {pid: int(length) for pid, length in zip(self.doc_ids, self._doc_len)}

    @property
    def postings(self):
        return {
            term: [(self.doc_ids[row], int(tf)) for row, tf in zip(rows, tfs)]
            for term, (rows, tfs) in self._postings.items()
        }

    @property
    def vocabulary_size(self):
        return len(self._postings)

    def document_frequency(self, term):
        entry = self._postings.get(term)
        return 0 if entry is None else len(entry[0])

    def idf(self, term):
        df = self.document_frequency(term)
        return math.log(1.0 + (self.num_docs - df + 0.5) / (df + 0.5))

    def score_all(self, query):
        """Dense score vector over all rows; repeated query tokens count once per occurrence."""
        scores = np.zeros(self.num_docs, dtype=np.float64)
        for term in tokenize(query):
            entry = self._postings.get(term)
            if entry is None:
                continue
            rows, tfs = entry
            scores[rows] += self.idf(term) * (tfs * (self.k1 + 1.0)) / (tfs + self._norm[rows])
        return scores

    def search(self, query, k):
        """Top-k passages with positive score, ordered by (score desc, passage_id asc)."""
        if k < 1:
            raise PreconditionError(f"k must be >= 1, got {k}")
        scores = self.score_all(query)
        rows = np.flatnonzero(scores > 0)
        if rows.size == 0:
            return []
        # lexsort sorts by the last key first; rows are already in passage-id order.
        order = rows[np.lexsort((rows, -scores[rows]))][:k]
        return [ScoredDoc(self.doc_ids[row], float(scores[row])) for row in order]

    def to_record(self):
        return {
            "magic": INDEX_MAGIC,
            "version": INDEX_VERSION,
            "params": {"k1": self.k1, "b": self.b},
            "doc_ids": self.doc_ids,
            "doc_lengths": [int(length) for length in self._doc_len],
            "postings": {
                term: [[int(row), int(tf)] for row, tf in zip(rows, tfs)]
                for term, (rows, tfs) in sorted(self._postings.items())
            },
        }

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        staged = path.with_name(path.name + ".partial")
        staged.write_text(json.dumps(self.to_record(), sort_keys=True, separators=(",", ":")), encoding="utf-8")
        staged.replace(path)
        logger.info(f"Saved BM25 index to {path}")
        return path

    @classmethod
    def load(cls, path):
        path = Path(path)
        if path.is_dir():
            path = path / INDEX_FILE
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise IndexFormatError(f"Cannot read BM25 index at {path}: {e}") from e

        if not isinstance(record, dict) or record.get("magic") != INDEX_MAGIC:
            raise IndexFormatError(f"{path} is not a BM25 index file")
        if record.get("version") != INDEX_VERSION:
            raise IndexFormatError(f"Unsupported BM25 index version {record.get('version')} (expected {INDEX_VERSION})")

        postings = {term: [(row, tf) for row, tf in entries] for term, entries in record["postings"].items()}
        return cls(
            record["doc_ids"],
            record["doc_lengths"],
            postings,
            k1=record["params"]["k1"],
            b=record["params"]["b"],
        )
