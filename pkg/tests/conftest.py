import json

import pytest

from refeed.backends.scripted import ScriptedBackend
from refeed.corpus.datasets import QaExample, dump_dataset
from refeed.corpus.store import CorpusStore, Passage
from refeed.retrieval.bm25 import Bm25Index

# Distractor vocabulary; none of these words occur in questions or gold passages.
NATO = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliett", "kilo", "lima"]


def secret_question(i):
    return f"What is the secret name of item {i}?"


def secret_passages(num_items, gold_extras=None):
    """
    One gold passage per item plus twelve distractors.

    Gold passages share no token with the questions, so the question alone
    never retrieves them; the answer token zephyr<i> occurs only in gold<i>.
    Distractors repeat the question words and the item number.
    """
    gold_extras = gold_extras or {}
    passages = []
    for i in range(1, num_items + 1):
        extra = f" near {gold_extras[i]}" if i in gold_extras else ""
        passages.append(Passage(f"gold{i}", f"Vault {i}", f"a keeper called zephyr{i} guards its vault{extra}", f"gold{i}", 0))
        for j, word in enumerate(NATO):
            pid = f"item{i}-d{j:02d}"
            passages.append(Passage(pid, f"Ledger {i}", f"the secret name of item {i} is unknown to {word}", pid, 0))
    return passages


def secret_dataset(num_items):
    return [QaExample(f"q{i}", secret_question(i), (f"zephyr{i}",)) for i in range(1, num_items + 1)]


def raw_corpus_lines(passages):
    return [json.dumps({"id": p.id, "title": p.title, "text": p.text}) for p in passages]


# Five-item script where each pipeline component changes some answers:
#   item 1  every mode answers correctly
#   item 2  greedy answer wrong, one nucleus sample correct (diversity helps)
#   item 3  greedy answer wrong but it occurs in the gold passage (feedback helps)
#   item 4  greedy answer correct, refine is misled, ensemble restores it
#   item 5  like item 3
ABLATION_SCRIPT = {
    "name": "ablation-fixture",
    "default_logprob": -1.0,
    "rules": [
        {"match": "- zephyr4\n", "completion": "decoy4"},
        {"match": "called zephyr2 guards", "completion": "zephyr2"},
        {"match": "called zephyr3 guards", "completion": "zephyr3"},
        {"match": "called zephyr5 guards", "completion": "zephyr5"},
        {"match": "of item 1?", "completion": "zephyr1"},
        {"match": "of item 2?", "completion": "ghost2", "samples": ["ghost2", "zephyr2", "ghost2"]},
        {"match": "of item 3?", "completion": "ember3"},
        {"match": "of item 4?", "completion": "zephyr4"},
        {"match": "of item 5?", "completion": "cinder5"},
    ],
    "scores": [
        {"match": "of item 4?", "completion": "zephyr4", "logprobs": [-0.1]},
    ],
    "default": {"completion": "unknown"},
}
ABLATION_GOLD_EXTRAS = {3: "ember3", 5: "cinder5"}


def answer_script(answers, **extra):
    """Script answering secret_question(i) with answers[i] in every prompt that contains it."""
    rules = [{"match": f"of item {i}?", "completion": text} for i, text in answers.items()]
    return {"rules": rules, "default": {"completion": "unknown"}, **extra}


@pytest.fixture
def tiny_passages():
    return [
        Passage("paris#0", "Paris", "Paris is the capital of France and its largest city", "paris", 0),
        Passage("paris#1", "Paris", "The Eiffel Tower stands in Paris", "paris", 1),
        Passage("lyon#0", "Lyon", "Lyon is a city in France known for cuisine", "lyon", 0),
        Passage("rome#0", "Rome", "Rome is the capital of Italy", "rome", 0),
        Passage("deadpool#0", "Deadpool 2", "Deadpool 2 was released on May 18 2018 in the United States", "deadpool", 0),
    ]


@pytest.fixture
def tiny_store(tiny_passages):
    return CorpusStore.from_passages(tiny_passages)


@pytest.fixture
def tiny_index(tiny_passages):
    return Bm25Index.build(tiny_passages)


@pytest.fixture
def secret_corpus():
    passages = secret_passages(20)
    return CorpusStore.from_passages(passages), Bm25Index.build(passages)


@pytest.fixture
def secret_backend():
    return ScriptedBackend.from_dict(answer_script({i: f"zephyr{i}" for i in range(1, 21)}))


@pytest.fixture
def ablation_corpus():
    passages = secret_passages(5, ABLATION_GOLD_EXTRAS)
    return CorpusStore.from_passages(passages), Bm25Index.build(passages)


@pytest.fixture
def ablation_backend():
    return ScriptedBackend.from_dict(ABLATION_SCRIPT)


@pytest.fixture
def ablation_workspace(tmp_path):
    """Raw corpus, dataset, script and run config for the five-item ablation fixture."""
    raw = tmp_path / "raw.jsonl"
    raw.write_text("\n".join(raw_corpus_lines(secret_passages(5, ABLATION_GOLD_EXTRAS))) + "\n", encoding="utf-8")
    dataset = tmp_path / "dev.jsonl"
    dump_dataset(secret_dataset(5), dataset)
    script = tmp_path / "script.json"
    script.write_text(json.dumps(ABLATION_SCRIPT), encoding="utf-8")
    config = tmp_path / "run.json"
    config.write_text(json.dumps({
        "corpus_dir": "corpus",
        "dataset_path": "dev.jsonl",
        "task": "qa",
        "mode": "refeed_basic",
        "workers": 2,
        "output_dir": "out",
        "backend": {"kind": "scripted", "script_path": "script.json"},
        "pipeline": {"n_samples": 3},
    }), encoding="utf-8")
    return {"root": tmp_path, "raw": raw, "dataset": dataset, "script": script, "config": config, "corpus": tmp_path / "corpus"}
