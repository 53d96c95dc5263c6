import json
import random
from pathlib import Path

import pytest

from refeed.analysis import contains_answer, exact_match, hits_at_k, normalize_answer, recall_at_k, rouge_l, token_f1
from refeed.corpus.store import Passage
from refeed.errors import PreconditionError
from refeed.pipeline.records import RetrievalPool
from refeed.retrieval.bm25 import ScoredDoc

CASES = json.loads((Path(__file__).parent / "fixtures" / "metric_cases.json").read_text(encoding="utf-8"))

WORDS = ["the", "a", "an", "cat", "sat", "Paris", "May", "18,", "2018", "U.S.", "rock-and-roll", "!", "Tom", "waits", "x"]


@pytest.mark.parametrize("case", CASES["answers"], ids=lambda case: case["prediction"] or "<empty>")
def test_answer_metric_table(case):
    assert exact_match(case["prediction"], case["golds"]) == case["em"]
    assert token_f1(case["prediction"], case["golds"]) == pytest.approx(case["f1"], abs=1e-6)


@pytest.mark.parametrize("case", CASES["rouge_l"], ids=lambda case: f"{case['prediction']}|{case['reference']}")
def test_rouge_l_table(case):
    assert rouge_l(case["prediction"], case["reference"]) == pytest.approx(case["score"], abs=1e-6)


def test_normalize_answer():
    assert normalize_answer("  The  Beatles! ") == "beatles"
    assert normalize_answer("An apple, a day.") == "apple day"
    assert normalize_answer("Theatre") == "theatre"


def test_metrics_need_gold_answers():
    with pytest.raises(PreconditionError):
        exact_match("x", [])
    with pytest.raises(PreconditionError):
        token_f1("x", [])


def test_contains_answer_respects_token_boundaries():
    assert contains_answer("It was released on May 18, 2018.", ["may 18 2018"])
    assert not contains_answer("Parisian cafes", ["Paris"])
    assert not contains_answer("anything", ["the"])


def random_text(rng):
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(0, 6)))


def test_metric_properties_on_random_strings():
    rng = random.Random(1234)
    for _ in range(1000):
        prediction = random_text(rng)
        gold = random_text(rng)
        em = exact_match(prediction, [gold])
        f1 = token_f1(prediction, [gold])
        assert em <= f1
        assert 0.0 <= f1 <= 1.0
        assert f1 == token_f1(gold, [prediction])
        assert normalize_answer(normalize_answer(prediction)) == normalize_answer(prediction)
        assert 0.0 <= rouge_l(prediction, gold) <= 1.0


def test_recall_at_k_is_monotone_in_k():
    rng = random.Random(99)
    for _ in range(200):
        passages = [Passage(f"p{i}", "", random_text(rng), f"p{i}", 0) for i in range(rng.randint(1, 12))]
        golds = [rng.choice(["cat", "Paris", "2018", "waits"])]
        pool = RetrievalPool(
            merged=tuple(ScoredDoc(p.id, 1.0) for p in passages),
            passages={p.id: p for p in passages},
        )
        hits = [recall_at_k(pool, golds, K) for K in range(1, 15)]
        assert hits == sorted(hits)
        assert hits[-1] == int(any(contains_answer(p.text, golds) for p in passages))


def test_hits_at_k_example():
    passages = [Passage("a", "", "nothing here", "a", 0), Passage("b", "", "released May 18 2018", "b", 0)]
    assert hits_at_k(passages, ["May 18, 2018"], 1) == 0
    assert hits_at_k(passages, ["May 18, 2018"], 2) == 1
    with pytest.raises(PreconditionError):
        hits_at_k(passages, ["x"], 0)
