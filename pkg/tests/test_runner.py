import asyncio
import json
import random

import pytest

from refeed.backends.scripted import ScriptedBackend
from refeed.errors import PreconditionError, StageError, TransportError
from refeed.pipeline import REFEED_BASIC, REFEED_FULL, PipelineConfig, ReFeedPipeline, TraceSink, read_traces, run_batch
from refeed.pipeline.runner import FAILURES_FILE, TRACES_FILE, FailureRecord

from conftest import answer_script, secret_dataset

SCRIPT = answer_script({i: f"zephyr{i}" for i in range(1, 21)})


class JitteryBackend(ScriptedBackend):
    """Scripted backend that sleeps a seeded random time per call and can fail chosen prompts."""

    def __init__(self, *args, fail_on=None, error=TransportError, seed=0, **kwargs):
        super().__init__(*args, **kwargs)
        self.fail_on = fail_on
        self.error = error
        self._rng = random.Random(seed)

    async def generate(self, prompt, params):
        await asyncio.sleep(self._rng.random() / 200)
        if self.fail_on and self.fail_on in prompt:
            raise self.error("connection reset")
        return await super().generate(prompt, params)


def make_pipeline(secret_corpus, mode=REFEED_BASIC, fail_on=None, error=TransportError, seed=0):
    store, index = secret_corpus
    template = ScriptedBackend.from_dict(SCRIPT)
    backend = JitteryBackend(rules=template.rules, default=template.default, fail_on=fail_on, error=error, seed=seed)
    return ReFeedPipeline(backend, index, store, PipelineConfig.for_mode(mode, n_samples=3))


def test_results_follow_dataset_order_for_any_worker_count(tmp_path, secret_corpus):
    examples = secret_dataset(20)
    outputs = {}
    for workers in (1, 4, 8):
        out_dir = tmp_path / f"w{workers}"
        with TraceSink(out_dir) as sink:
            result = asyncio.run(run_batch(make_pipeline(secret_corpus, seed=workers), examples, workers=workers, sink=sink))
        assert [t.question_id for t in result.traces] == [e.id for e in examples]
        outputs[workers] = (out_dir / TRACES_FILE).read_bytes()

    assert outputs[1] == outputs[4] == outputs[8]
    assert [t.final.text for t in read_traces(tmp_path / "w4" / TRACES_FILE)] == [f"zephyr{i}" for i in range(1, 21)]


def test_failed_example_is_recorded_and_batch_continues(tmp_path, secret_corpus):
    pipeline = make_pipeline(secret_corpus, fail_on="of item 3?")
    with TraceSink(tmp_path) as sink:
        result = asyncio.run(run_batch(pipeline, secret_dataset(6), workers=3, sink=sink))

    assert [t.question_id for t in result.traces] == ["q1", "q2", "q4", "q5", "q6"]
    assert result.failures == [FailureRecord("q3", "initial", "TransportError", "connection reset")]
    assert result.summary == "5 traces, 1 failures"
    lines = (tmp_path / FAILURES_FILE).read_text(encoding="utf-8").splitlines()
    assert [json.loads(line) for line in lines] == [
        {"error_type": "TransportError", "message": "connection reset", "question_id": "q3", "stage": "initial"}
    ]


def test_strict_mode_raises_first_failure(secret_corpus):
    pipeline = make_pipeline(secret_corpus, mode=REFEED_FULL, fail_on="of item 2?")
    with pytest.raises(StageError) as error:
        asyncio.run(run_batch(pipeline, secret_dataset(5), workers=2, strict=True))
    assert error.value.question_id == "q2"


def test_unexpected_error_is_recorded_as_unknown_stage(tmp_path, secret_corpus):
    pipeline = make_pipeline(secret_corpus, fail_on="of item 2?", error=ValueError)
    with TraceSink(tmp_path) as sink:
        result = asyncio.run(run_batch(pipeline, secret_dataset(4), workers=2, sink=sink))

    assert result.summary == "3 traces, 1 failures"
    assert result.failures == [FailureRecord("q2", "unknown", "ValueError", "connection reset")]
    assert len((tmp_path / TRACES_FILE).read_text(encoding="utf-8").splitlines()) == 3


def test_strict_mode_raises_unexpected_error_unchanged(secret_corpus):
    pipeline = make_pipeline(secret_corpus, fail_on="of item 1?", error=ValueError)
    with pytest.raises(ValueError, match="connection reset"):
        asyncio.run(run_batch(pipeline, secret_dataset(3), workers=1, strict=True))


def test_in_memory_sink_by_default(secret_corpus):
    result = asyncio.run(run_batch(make_pipeline(secret_corpus), secret_dataset(3), workers=2))
    assert len(result.traces) == 3
    assert result.failures == []


def test_workers_must_be_positive(secret_corpus):
    with pytest.raises(PreconditionError):
        asyncio.run(run_batch(make_pipeline(secret_corpus), secret_dataset(1), workers=0))


def test_sink_buffers_out_of_order_results():
    sink = TraceSink()
    failure = FailureRecord("q2", "refine", "BackendError", "boom")
    sink.put(1, failure)
    assert sink.result.failures == []
    sink.put(0, FailureRecord("q1", "initial", "BackendError", "boom"))
    assert [f.question_id for f in sink.result.failures] == ["q1", "q2"]


def test_failure_from_plain_error():
    record = FailureRecord.from_error("q9", PreconditionError("bad input"))
    assert record == FailureRecord("q9", "unknown", "PreconditionError", "bad input")
