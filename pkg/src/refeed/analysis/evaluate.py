"""
Run-level evaluation of pipeline traces against a dataset.

QA examples are scored with EM, token F1 and hit@K over the trace's merged
pool; dialogue examples with token F1 and Rouge-L against the reference.
An example without a trace scores 0 on every metric.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from refeed.analysis.metrics import ROUGE_BETA, exact_match, recall_at_k, rouge_l, token_f1
from refeed.corpus.datasets import DIALOGUE, QA
from refeed.errors import PreconditionError, TraceMismatchError
from refeed.pipeline.records import ORIGIN_REFINED

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 5, 10)
REPORT_FILE = "report.json"
PER_EXAMPLE_FILE = "per_example.csv"


def hit_column(K):
    return f"hit@{K}"


@dataclass
class MetricsReport:
    kind: str
    num_examples: int
    em: float = None
    f1: float = 0.0
    rouge_l: float = None
    recall_at_k: dict = field(default_factory=dict)
    per_example: pd.DataFrame = field(default_factory=pd.DataFrame)
    missing_ids: list = field(default_factory=list)
    feedback: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def aggregates(self):
        values = {"num_examples": self.num_examples, "f1": self.f1}
        if self.em is not None:
            values["em"] = self.em
        if self.rouge_l is not None:
            values["rouge_l"] = self.rouge_l
        for K, value in self.recall_at_k.items():
            values[f"recall@{K}"] = value
        return values

    def to_record(self):
        return {
            "kind": self.kind,
            "aggregates": self.aggregates,
            "missing_ids": list(self.missing_ids),
            "feedback": dict(self.feedback),
            "metadata": dict(self.metadata),
            "per_example": self.per_example.to_dict(orient="records"),
        }

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / REPORT_FILE
        report_path.write_text(json.dumps(self.to_record(), indent=2, sort_keys=True), encoding="utf-8")
        self.per_example.to_csv(out_dir / PER_EXAMPLE_FILE, index=False)
        logger.info(f"Saved metrics report to {report_path}")
        return report_path

    def summary(self):
        return "  ".join(
            f"{name}={value:.4f}" if isinstance(value, float) else f"{name}={value}"
            for name, value in self.aggregates.items()
        )


def _index_traces(traces, dataset):
    known = {example.id for example in dataset}
    unknown = {trace.question_id for trace in traces} - known
    if unknown:
        raise TraceMismatchError(unknown)
    by_id = {}
    for trace in traces:
        if trace.question_id in by_id:
            logger.warning(f"Duplicate trace for question {trace.question_id}; keeping the last one")
        by_id[trace.question_id] = trace
    return by_id


def _qa_row(example, trace, Ks):
    row = {"id": example.id, "traced": trace is not None}
    if trace is None:
        row.update(prediction="", em=0, f1=0.0)
        row.update({hit_column(K): 0 for K in Ks})
        return row
    prediction = trace.final.text
    row.update(prediction=prediction, em=exact_match(prediction, example.answers), f1=token_f1(prediction, example.answers))
    row.update({hit_column(K): recall_at_k(trace.pool, example.answers, K) for K in Ks})
    return row


def _dialogue_row(example, trace):
    if trace is None:
        return {"id": example.id, "traced": False, "prediction": "", "f1": 0.0, "rouge_l": 0.0}
    prediction = trace.final.text
    return {
        "id": example.id,
        "traced": True,
        "prediction": prediction,
        "f1": token_f1(prediction, [example.reference]),
        "rouge_l": rouge_l(prediction, example.reference),
    }


def feedback_effect(traces, dataset):
    """
    Count how retrieval feedback moved QA answers from the initial to the final one.

    Only traces that carry both an initial and a refined answer take part.
    """
    by_id = {trace.question_id: trace for trace in traces}
    counts = {"fixed": 0, "misled": 0, "kept_correct": 0, "kept_wrong": 0, "ensemble_kept_initial": 0}
    for example in dataset:
        trace = by_id.get(example.id)
        if example.kind != QA or trace is None or trace.initial is None or trace.refined is None:
            continue
        before = exact_match(trace.initial.text, example.answers)
        after = exact_match(trace.final.text, example.answers)
        if before and after:
            counts["kept_correct"] += 1
        elif before:
            counts["misled"] += 1
        elif after:
            counts["fixed"] += 1
        else:
            counts["kept_wrong"] += 1
        if trace.ensemble_applied and trace.final.origin != ORIGIN_REFINED:
            counts["ensemble_kept_initial"] += 1
    return counts


def evaluate_run(traces, dataset, Ks=DEFAULT_KS, fingerprint=None):
    """Score traces against the dataset; aggregates are means over every dataset example."""
    Ks = sorted(set(Ks))
    if any(K < 1 for K in Ks):
        raise PreconditionError(f"Every K must be >= 1, got {Ks}")
    dataset = list(dataset)
    kinds = {example.kind for example in dataset}
    if len(kinds) > 1:
        raise PreconditionError("Cannot evaluate a dataset that mixes qa and dialogue examples")
    kind = kinds.pop() if kinds else QA

    by_id = _index_traces(traces, dataset)
    missing = [example.id for example in dataset if example.id not in by_id]
    if missing:
        logger.warning(f"{len(missing)} of {len(dataset)} examples have no trace and score 0")

    if kind == DIALOGUE:
        rows = [_dialogue_row(example, by_id.get(example.id)) for example in dataset]
        columns = ["id", "traced", "prediction", "f1", "rouge_l"]
    else:
        rows = [_qa_row(example, by_id.get(example.id), Ks) for example in dataset]
        columns = ["id", "traced", "prediction", "em", "f1", *(hit_column(K) for K in Ks)]
    df = pd.DataFrame(rows, columns=columns)

    def mean(column):
        return float(df[column].mean()) if len(df) else 0.0

    report = MetricsReport(
        kind=kind,
        num_examples=len(dataset),
        f1=mean("f1"),
        per_example=df,
        missing_ids=missing,
        metadata={"rouge_beta": ROUGE_BETA, "ks": Ks, "fingerprint": fingerprint or {}},
    )
    if kind == DIALOGUE:
        report.rouge_l = mean("rouge_l")
    else:
        report.em = mean("em")
        report.recall_at_k = {K: mean(hit_column(K)) for K in Ks}
        report.feedback = feedback_effect(traces, dataset)

    logger.info(f"Evaluated {len(dataset)} examples: {report.summary()}")
    return report
