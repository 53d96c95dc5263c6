from refeed.analysis.metrics import (
    ROUGE_BETA,
    contains_answer,
    exact_match,
    hits_at_k,
    normalize_answer,
    recall_at_k,
    rouge_l,
    token_f1,
)

__all__ = [
    "ROUGE_BETA",
    "contains_answer",
    "exact_match",
    "hits_at_k",
    "normalize_answer",
    "recall_at_k",
    "rouge_l",
    "token_f1",
]
