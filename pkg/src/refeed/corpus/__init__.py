from refeed.corpus.datasets import DIALOGUE, QA, DialogueExample, QaExample, dump_dataset, load_dataset
from refeed.corpus.store import (
    DEFAULT_CHUNK_SIZE,
    CorpusStats,
    CorpusStore,
    Passage,
    chunk_document,
    ingest_corpus,
    ingest_corpus_file,
    whitespace_tokens,
)

__all__ = [
    "DEFAULT_CHUNK_SIZE",
    "DIALOGUE",
    "QA",
    "CorpusStats",
    "CorpusStore",
    "DialogueExample",
    "Passage",
    "QaExample",
    "chunk_document",
    "dump_dataset",
    "ingest_corpus",
    "ingest_corpus_file",
    "load_dataset",
    "whitespace_tokens",
]
