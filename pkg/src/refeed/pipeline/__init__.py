from refeed.pipeline.records import AnswerCandidate, PipelineTrace, RetrievalPool, read_traces
from refeed.pipeline.refeed import (
    CLOSED_BOOK,
    MODES,
    REFEED_BASIC,
    REFEED_COT,
    REFEED_DIVERSE,
    REFEED_FULL,
    RETRIEVE_THEN_READ,
    EnsembleDecision,
    PipelineConfig,
    ReFeedPipeline,
    extract_cot_answer,
    merge_hits,
    select_by_likelihood,
)
from refeed.pipeline.runner import BatchResult, FailureRecord, TraceSink, run_batch
from refeed.pipeline.templates import PromptTemplate, load_shots, load_templates

__all__ = [
    "CLOSED_BOOK",
    "MODES",
    "REFEED_BASIC",
    "REFEED_COT",
    "REFEED_DIVERSE",
    "REFEED_FULL",
    "RETRIEVE_THEN_READ",
    "AnswerCandidate",
    "BatchResult",
    "EnsembleDecision",
    "FailureRecord",
    "PipelineConfig",
    "PipelineTrace",
    "PromptTemplate",
    "ReFeedPipeline",
    "RetrievalPool",
    "TraceSink",
    "extract_cot_answer",
    "load_shots",
    "load_templates",
    "merge_hits",
    "read_traces",
    "run_batch",
    "select_by_likelihood",
]
