"""
Retrieval coverage: Recall@K of the question alone against queries that
carry the model's own answers.
"""
import logging
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd

from refeed.analysis.metrics import hits_at_k
from refeed.corpus.datasets import QA
from refeed.errors import PreconditionError
from refeed.pipeline.refeed import merge_hits

logger = logging.getLogger(__name__)

QUESTION_ONLY = "question_only"
GREEDY_ANSWER = "greedy_answer"
DIVERSE_ANSWERS = "diverse_answers"
ARMS = (QUESTION_ONLY, GREEDY_ANSWER, DIVERSE_ANSWERS)

COVERAGE_CSV = "coverage.csv"
COVERAGE_PNG = "coverage.png"


def _arm_queries(example, trace):
    question = example.query_text
    queries = {QUESTION_ONLY: [question], GREEDY_ANSWER: [], DIVERSE_ANSWERS: []}
    if trace is None:
        return queries
    if trace.initial is not None:
        queries[GREEDY_ANSWER] = [f"{question} {trace.initial.text}"]
    queries[DIVERSE_ANSWERS] = [f"{question} {candidate.text}" for candidate in trace.candidates]
    return queries


def coverage_report(dataset, traces, index, store, Ks=(1, 5, 10, 20)):
    """
    Recall@K per query arm, as a frame indexed by K with one column per arm.

    Arms without a query for some example (no trace, or no candidates)
    count that example as a miss.
    """
    Ks = sorted(set(Ks))
    if not Ks or Ks[0] < 1:
        raise PreconditionError(f"Every K must be >= 1, got {Ks}")
    dataset = list(dataset)
    if any(example.kind != QA for example in dataset):
        raise PreconditionError("Coverage needs a qa dataset with gold answers")
    by_id = {trace.question_id: trace for trace in traces}
    depth = Ks[-1]

    hits = {arm: {K: 0 for K in Ks} for arm in ARMS}
    for example in dataset:
        for arm, queries in _arm_queries(example, by_id.get(example.id)).items():
            if not queries:
                continue
            merged = merge_hits([index.search(query, depth) for query in queries], depth)
            passages = [store.get_passage(doc.passage_id) for doc in merged]
            for K in Ks:
                hits[arm][K] += hits_at_k(passages, example.answers, K)

    total = len(dataset)
    frame = pd.DataFrame(
        {arm: [hits[arm][K] / total if total else 0.0 for K in Ks] for arm in ARMS},
        index=pd.Index(Ks, name="K"),
    )
    logger.info(f"Coverage over {total} questions at K={depth}: " + ", ".join(f"{arm}={frame.loc[depth, arm]:.3f}" for arm in ARMS))
    return frame


def plot_coverage(frame, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(8, 5))
    for arm in frame.columns:
        ax.plot(frame.index, frame[arm], marker="o", label=arm)
    ax.set_title("Retrieval coverage")
    ax.set_xlabel("K")
    ax.set_ylabel("Recall@K")
    ax.set_ylim(0, 1.05)
    ax.legend(title="Query")
    ax.grid(True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_coverage(frame, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_dir / COVERAGE_CSV)
    plot_coverage(frame, out_dir / COVERAGE_PNG)
    logger.info(f"Saved coverage table and plot to {out_dir}")
    return out_dir / COVERAGE_CSV
