import asyncio
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from refeed.errors import PreconditionError, RefeedError, StageError

logger = logging.getLogger(__name__)

TRACES_FILE = "traces.jsonl"
FAILURES_FILE = "failures.jsonl"
PROGRESS_EVERY = 25


@dataclass(frozen=True)
class FailureRecord:
    question_id: str
    stage: str
    error_type: str
    message: str

    @classmethod
    def from_error(cls, question_id, error):
        if isinstance(error, StageError):
            return cls(question_id, error.stage, type(error.cause).__name__, str(error.cause))
        return cls(question_id, "unknown", type(error).__name__, str(error))

    def to_record(self):
        return {"question_id": self.question_id, "stage": self.stage, "error_type": self.error_type, "message": self.message}


@dataclass
class BatchResult:
    traces: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def summary(self):
        return f"{len(self.traces)} traces, {len(self.failures)} failures"


class TraceSink:
    """
    Append-only writer that emits results in dataset order.

    Results may arrive in any order; each is buffered until every earlier
    position has been written.
    """

    def __init__(self, out_dir=None):
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self._pending = {}
        self._next = 0
        self._traces = None
        self._failures = None
        self.result = BatchResult()

    def __enter__(self):
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self._traces = open(self.out_dir / TRACES_FILE, "w", encoding="utf-8", newline="\n")
            self._failures = open(self.out_dir / FAILURES_FILE, "w", encoding="utf-8", newline="\n")
        return self

    def __exit__(self, *exc_info):
        for handle in (self._traces, self._failures):
            if handle is not None:
                handle.close()

    def put(self, position, outcome):
        self._pending[position] = outcome
        while self._next in self._pending:
            self._write(self._pending.pop(self._next))
            self._next += 1

    def _write(self, outcome):
        if isinstance(outcome, FailureRecord):
            self.result.failures.append(outcome)
            if self._failures is not None:
                self._failures.write(json.dumps(outcome.to_record(), sort_keys=True) + "\n")
                self._failures.flush()
        else:
            self.result.traces.append(outcome)
            if self._traces is not None:
                self._traces.write(outcome.to_json() + "\n")
                self._traces.flush()


async def run_batch(pipeline, examples, workers=4, strict=False, sink=None):
    """
    Run the pipeline over every example with at most `workers` in flight.

    A failing example becomes a FailureRecord and the batch continues,
    unless strict is set, in which case the first failure is raised.
    """
    if workers < 1:
        raise PreconditionError(f"workers must be >= 1, got {workers}")
    sink = sink if sink is not None else TraceSink()
    semaphore = asyncio.Semaphore(workers)
    total = len(examples)
    done = 0

    async def run_one(position, example):
        nonlocal done
        async with semaphore:
            try:
                outcome = await pipeline.run(example)
            except Exception as e:
                if strict:
                    raise
                outcome = FailureRecord.from_error(example.id, e)
                if isinstance(e, RefeedError):
                    logger.error(f"Question {example.id} failed at stage '{outcome.stage}': {outcome.message}")
                else:
                    logger.exception(f"Question {example.id} failed with unexpected {outcome.error_type}: {outcome.message}")
        sink.put(position, outcome)
        done += 1
        if done % PROGRESS_EVERY == 0 or done == total:
            logger.info(f"Processed {done}/{total} examples")

    tasks = [asyncio.create_task(run_one(i, example)) for i, example in enumerate(examples)]
    try:
        await asyncio.gather(*tasks)
    except BaseException:
        for task in tasks:
            task.cancel()
        await asyncio.gather(*tasks, return_exceptions=True)
        raise

    logger.info(f"Batch finished: {sink.result.summary}")
    return sink.result
