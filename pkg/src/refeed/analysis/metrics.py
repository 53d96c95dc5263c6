"""
Answer-level metrics: SQuAD-style normalisation, exact match, token F1,
Rouge-L and answer-containment Recall@K.
"""
import re
import string
from collections import Counter

from refeed.errors import PreconditionError

ROUGE_BETA = 1.0

_PUNCTUATION = set(string.punctuation)
_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")


def normalize_answer(text):
    """Lowercase, drop ASCII punctuation and the articles a/an/the, collapse whitespace."""
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCTUATION)
    text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


def _require_golds(golds):
    if not golds:
        raise PreconditionError("At least one gold answer is required")


def exact_match(prediction, golds):
    _require_golds(golds)
    normalized = normalize_answer(prediction)
    return int(any(normalized == normalize_answer(gold) for gold in golds))


def _f1(prediction_tokens, gold_tokens):
    if not prediction_tokens and not gold_tokens:
        return 1.0
    common = Counter(prediction_tokens) & Counter(gold_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(prediction_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(prediction, golds):
    """Best multiset-overlap F1 of the normalised prediction against any gold."""
    _require_golds(golds)
    prediction_tokens = normalize_answer(prediction).split()
    return max(_f1(prediction_tokens, normalize_answer(gold).split()) for gold in golds)


def lcs_length(a, b):
    if len(a) < len(b):
        a, b = b, a
    previous = [0] * (len(b) + 1)
    for token in a:
        current = [0]
        for j, other in enumerate(b, start=1):
            if token == other:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rouge_l(prediction, reference):
    """LCS F-measure (beta = 1) over lowercased whitespace tokens."""
    prediction_tokens = prediction.lower().split()
    reference_tokens = reference.lower().split()
    if not prediction_tokens or not reference_tokens:
        return 0.0
    lcs = lcs_length(prediction_tokens, reference_tokens)
    if lcs == 0:
        return 0.0
    precision = lcs / len(prediction_tokens)
    recall = lcs / len(reference_tokens)
    beta2 = ROUGE_BETA ** 2
    return (1 + beta2) * precision * recall / (recall + beta2 * precision)


def contains_answer(text, golds):
    """True if some normalised gold occurs in the normalised text on token boundaries."""
    haystack = f" {normalize_answer(text)} "
    for gold in golds:
        needle = normalize_answer(gold)
        if needle and f" {needle} " in haystack:
            return True
    return False


def hits_at_k(passages, golds, K):
    """Hit flag of the first K passages (in ranked order) for one question."""
    if K < 1:
        raise PreconditionError(f"K must be >= 1, got {K}")
    _require_golds(golds)
    return int(any(contains_answer(p.text, golds) for p in passages[:K]))


def recall_at_k(pool, golds, K):
    """1 if any of the top-K merged passages of the pool contains a gold answer."""
    passages = [pool.passages[d.passage_id] for d in pool.merged]
    return hits_at_k(passages, golds, K)
