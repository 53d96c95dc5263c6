from refeed.retrieval.bm25 import (
    DEFAULT_B,
    DEFAULT_K1,
    INDEX_FILE,
    Bm25Index,
    ScoredDoc,
    tokenize,
)

__all__ = ["DEFAULT_B", "DEFAULT_K1", "INDEX_FILE", "Bm25Index", "ScoredDoc", "tokenize"]
