"""
Answer-then-retrieve-then-refine orchestration.

Stages of one run:
    1. initial  - closed-book greedy answer (plus nucleus samples in diverse modes)
    2. retrieve - one BM25 query per candidate, "question answer", max-merged into a pool
    3. refine   - greedy answer conditioned on the pool and every candidate
    4. ensemble - keep the initial answer if it scores a higher mean log-probability
Baselines reuse the same pieces: closed_book stops after stage 1 and
retrieve_then_read retrieves with the question alone before reading.
"""
import logging
import re
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

from refeed.backends.base import DecodeParams
from refeed.errors import CapabilityError, PreconditionError, RefeedError, StageError
from refeed.pipeline.records import (
    ORIGIN_GREEDY,
    ORIGIN_REFINED,
    AnswerCandidate,
    PipelineTrace,
    RetrievalPool,
    sample_origin,
)
from refeed.pipeline.templates import format_candidates, format_passages, load_templates
from refeed.retrieval.bm25 import ScoredDoc

logger = logging.getLogger(__name__)

CLOSED_BOOK = "closed_book"
RETRIEVE_THEN_READ = "retrieve_then_read"
REFEED_BASIC = "refeed_basic"
REFEED_DIVERSE = "refeed_diverse"
REFEED_FULL = "refeed_full"
REFEED_COT = "refeed_cot"

# mode -> (diverse, ensemble, cot)
MODE_FLAGS = {
    CLOSED_BOOK: (False, False, False),
    RETRIEVE_THEN_READ: (False, False, False),
    REFEED_BASIC: (False, False, False),
    REFEED_DIVERSE: (True, False, False),
    REFEED_FULL: (True, True, False),
    REFEED_COT: (False, False, True),
}
MODES = tuple(MODE_FLAGS)
FEEDBACK_MODES = (REFEED_BASIC, REFEED_DIVERSE, REFEED_FULL, REFEED_COT)

OWN_CONTEXT = "own_context"
SAME_ANSWER = "same_answer"
ENSEMBLE_SCORING = (OWN_CONTEXT, SAME_ANSWER)

DEFAULT_ANSWER_MARKER = "So the answer is"


def clean_answer(text):
    text = text.strip()
    if text.endswith("."):
        text = text[:-1].rstrip()
    return text


def extract_cot_answer(cot_text, marker=DEFAULT_ANSWER_MARKER):
    """Answer after the last marker, else the last non-empty line."""
    position = cot_text.rfind(marker)
    if position >= 0:
        answer = cot_text[position + len(marker):]
        answer = re.sub(r"^\s*:", "", answer)
        return clean_answer(answer)
    lines = [line for line in cot_text.splitlines() if line.strip()]
    return clean_answer(lines[-1]) if lines else ""


def merge_hits(per_query, k):
    """Union of hit lists; a passage keeps its best score; ranked by (score desc, id asc) and cut to k."""
    best = {}
    for hits in per_query:
        for doc in hits:
            if doc.passage_id not in best or doc.score > best[doc.passage_id]:
                best[doc.passage_id] = doc.score
    ranked = sorted(best.items(), key=lambda item: (-item[1], item[0]))
    return tuple(ScoredDoc(pid, score) for pid, score in ranked[:k])


def dedup_candidates(candidates):
    seen = set()
    unique = []
    for candidate in candidates:
        if candidate.normalized not in seen:
            seen.add(candidate.normalized)
            unique.append(candidate)
    return unique


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = REFEED_BASIC
    k_docs: int = 10
    n_samples: int = 5
    decode_initial: DecodeParams = field(default_factory=lambda: DecodeParams.greedy(max_tokens=32, stop_sequences=("\n",)))
    decode_sample: DecodeParams = field(default_factory=lambda: DecodeParams.nucleus(top_p=0.95, temperature=1.0, max_tokens=32, stop_sequences=("\n",)))
    decode_cot: DecodeParams = field(default_factory=lambda: DecodeParams.greedy(max_tokens=256, stop_sequences=("\n\n",)))
    diverse: bool = False
    ensemble: bool = False
    cot: bool = False
    templates: dict = field(default_factory=load_templates)
    include_greedy_candidate: bool = True
    ensemble_scoring: str = OWN_CONTEXT
    answer_marker: str = DEFAULT_ANSWER_MARKER

    def __post_init__(self):
        if self.mode not in MODE_FLAGS:
            raise PreconditionError(f"Unknown pipeline mode '{self.mode}' (expected one of {', '.join(MODES)})")
        if self.k_docs < 1:
            raise PreconditionError(f"k_docs must be >= 1, got {self.k_docs}")
        if self.n_samples < 1:
            raise PreconditionError(f"n_samples must be >= 1, got {self.n_samples}")
        if not self.decode_initial.is_greedy or not self.decode_cot.is_greedy:
            raise PreconditionError("decode_initial and decode_cot must use greedy decoding")
        if self.decode_sample.is_greedy:
            raise PreconditionError("decode_sample must use nucleus decoding")
        if self.ensemble_scoring not in ENSEMBLE_SCORING:
            raise PreconditionError(f"ensemble_scoring must be one of {', '.join(ENSEMBLE_SCORING)}")
        missing = {"initial", "refine", "read", "cot_initial", "cot_refine"} - set(self.templates)
        if missing:
            raise PreconditionError(f"Missing templates for stages: {', '.join(sorted(missing))}")

    @classmethod
    def for_mode(cls, mode, **overrides):
        if mode not in MODE_FLAGS:
            raise PreconditionError(f"Unknown pipeline mode '{mode}' (expected one of {', '.join(MODES)})")
        diverse, ensemble, cot = MODE_FLAGS[mode]
        values = {"diverse": diverse, "ensemble": ensemble, "cot": cot, **overrides}
        return cls(mode=mode, **values)

    @property
    def effective_samples(self):
        return self.n_samples if self.diverse else 1

    def fingerprint(self):
        return {
            "mode": self.mode,
            "k_docs": self.k_docs,
            "n_samples": self.effective_samples,
            "diverse": self.diverse,
            "ensemble": self.ensemble,
            "cot": self.cot,
            "ensemble_scoring": self.ensemble_scoring,
            "decode_initial": self.decode_initial.to_record(),
            "decode_sample": self.decode_sample.to_record(),
            "templates": {name: template.fingerprint for name, template in sorted(self.templates.items())},
        }


@dataclass(frozen=True)
class EnsembleDecision:
    final: AnswerCandidate
    initial_ll: float = None
    refined_ll: float = None
    applied: bool = False
    note: str = None


def select_by_likelihood(initial, refined, initial_ll, refined_ll):
    """Higher mean log-probability wins; a tie keeps the refined answer."""
    return initial if initial_ll > refined_ll else refined


@contextmanager
def stage(name, question_id):
    try:
        yield
    except StageError:
        raise
    except RefeedError as e:
        raise StageError(name, question_id, e) from e


class ReFeedPipeline:
    def __init__(self, backend, index, store, config):
        self.backend = backend
        self.index = index
        self.store = store
        self.config = config

    @property
    def _initial_template(self):
        return self.config.templates["cot_initial" if self.config.cot else "initial"]

    @property
    def _refine_template(self):
        return self.config.templates["cot_refine" if self.config.cot else "refine"]

    def render_initial(self, question):
        return self._initial_template.render(question=question)

    def render_refine(self, question, candidates, pool, initial=None):
        template = self._refine_template
        values = {
            "question": question,
            "passages": format_passages(pool.merged_passages),
            "candidates": format_candidates(candidates),
        }
        if "initial_answer" in template.fields:
            values["initial_answer"] = initial.text if initial is not None else (candidates[0].text if candidates else "")
        return template.render(**values)

    def render_read(self, question, pool):
        return self.config.templates["read"].render(question=question, passages=format_passages(pool.merged_passages))

    def _answer_from(self, generation):
        if self.config.cot:
            return extract_cot_answer(generation.text, self.config.answer_marker), generation.text
        return clean_answer(generation.text), None

    @property
    def _answer_params(self):
        return self.config.decode_cot if self.config.cot else self.config.decode_initial

    async def generate_initial(self, question, question_id=""):
        prompt = self.render_initial(question)
        with stage("initial", question_id):
            generation = await self.backend.generate(prompt, self._answer_params)
        text, raw = self._answer_from(generation)
        logger.debug(f"[{question_id}] initial answer: {text!r}")
        return AnswerCandidate.create(text, ORIGIN_GREEDY, mean_logprob=generation.mean_logprob, raw_text=raw)

    async def generate_diverse(self, question, question_id=""):
        """n_samples nucleus samples, collapsed on normalised text; first occurrence wins."""
        if not self.config.diverse:
            raise PreconditionError("generate_diverse requires a diverse configuration")
        prompt = self.render_initial(question)
        params = self.config.decode_sample
        if self.config.cot:
            params = replace(params, max_tokens=self.config.decode_cot.max_tokens, stop_sequences=self.config.decode_cot.stop_sequences)
        with stage("sample", question_id):
            generations = await self.backend.sample_n(prompt, self.config.n_samples, params)
        candidates = []
        for j, generation in enumerate(generations, start=1):
            text, raw = self._answer_from(generation)
            candidates.append(AnswerCandidate.create(text, sample_origin(j), mean_logprob=generation.mean_logprob, raw_text=raw))
        unique = dedup_candidates(candidates)
        logger.debug(f"[{question_id}] {len(generations)} samples, {len(unique)} distinct")
        return unique

    def _search(self, query):
        return tuple(self.index.search(query, self.config.k_docs))

    def _pool(self, per_query):
        merged = merge_hits([hits for _, hits in per_query], self.config.k_docs)
        passages = {doc.passage_id: self.store.get_passage(doc.passage_id) for doc in merged}
        return RetrievalPool(per_query=tuple(per_query), merged=merged, passages=passages)

    def retrieve_feedback(self, question, candidates, question_id=""):
        if not candidates:
            raise PreconditionError("retrieve_feedback needs at least one candidate")
        with stage("retrieve", question_id):
            per_query = []
            for candidate in candidates:
                query = f"{question} {candidate.text}"
                per_query.append((query, self._search(query)))
            return self._pool(per_query)

    def retrieve_question_only(self, question, question_id=""):
        with stage("retrieve", question_id):
            return self._pool([(question, self._search(question))])

    async def refine(self, question, candidates, pool, initial=None, question_id=""):
        prompt = self.render_refine(question, candidates, pool, initial)
        with stage("refine", question_id):
            generation = await self.backend.generate(prompt, self._answer_params)
        text, raw = self._answer_from(generation)
        logger.debug(f"[{question_id}] refined answer: {text!r}")
        return AnswerCandidate.create(text, ORIGIN_REFINED, mean_logprob=generation.mean_logprob, raw_text=raw)

    async def read(self, question, pool, question_id=""):
        prompt = self.render_read(question, pool)
        with stage("read", question_id):
            generation = await self.backend.generate(prompt, self.config.decode_initial)
        return AnswerCandidate.create(clean_answer(generation.text), ORIGIN_REFINED, mean_logprob=generation.mean_logprob)

    async def ensemble_select(self, initial, refined, question, pool, candidates, question_id=""):
        if not self.backend.capabilities.supports_logprobs:
            return EnsembleDecision(final=refined, note="backend does not expose log-probabilities")
        if not initial.text.strip() or not refined.text.strip():
            return EnsembleDecision(final=refined, note="empty answer cannot be scored")

        initial_prompt = self.render_initial(question)
        refine_prompt = self.render_refine(question, candidates, pool, initial)
        initial_answer = refined.text if self.config.ensemble_scoring == SAME_ANSWER else initial.text
        try:
            with stage("ensemble", question_id):
                initial_ll, _ = await self.backend.score_completion(initial_prompt, initial_answer)
                refined_ll, _ = await self.backend.score_completion(refine_prompt, refined.text)
        except StageError as e:
            if isinstance(e.cause, CapabilityError):
                return EnsembleDecision(final=refined, note=str(e.cause))
            raise

        final = select_by_likelihood(initial, refined, initial_ll, refined_ll)
        logger.debug(f"[{question_id}] ensemble ll initial={initial_ll:.4f} refined={refined_ll:.4f} -> {final.origin}")
        return EnsembleDecision(final=final, initial_ll=initial_ll, refined_ll=refined_ll, applied=True)

    async def run(self, example):
        """Execute the configured mode on one dataset example and return its trace."""
        cfg = self.config
        question = example.query_text
        qid = example.id
        prompts = {}

        if cfg.mode == RETRIEVE_THEN_READ:
            pool = self.retrieve_question_only(question, qid)
            prompts["read"] = self.render_read(question, pool)
            refined = await self.read(question, pool, qid)
            return PipelineTrace(
                question_id=qid, mode=cfg.mode, candidates=(), pool=pool,
                initial=None, refined=refined, final=refined, prompts=prompts,
            )

        prompts[self._initial_template.name] = self.render_initial(question)
        initial = await self.generate_initial(question, qid)
        if cfg.mode == CLOSED_BOOK:
            return PipelineTrace(
                question_id=qid, mode=cfg.mode, candidates=(initial,), pool=RetrievalPool.empty(),
                initial=initial, refined=None, final=initial, prompts=prompts,
            )

        candidates = [initial]
        if cfg.diverse:
            samples = await self.generate_diverse(question, qid)
            candidates = dedup_candidates([initial, *samples]) if cfg.include_greedy_candidate else samples

        pool = self.retrieve_feedback(question, candidates, qid)
        prompts[self._refine_template.name] = self.render_refine(question, candidates, pool, initial)
        refined = await self.refine(question, candidates, pool, initial, qid)

        decision = EnsembleDecision(final=refined)
        if cfg.ensemble:
            decision = await self.ensemble_select(initial, refined, question, pool, candidates, qid)
            if not decision.applied:
                logger.warning(f"[{qid}] ensemble skipped: {decision.note}")

        return PipelineTrace(
            question_id=qid,
            mode=cfg.mode,
            candidates=tuple(candidates),
            pool=pool,
            initial=initial,
            refined=refined,
            final=decision.final,
            initial_ll=decision.initial_ll,
            refined_ll=decision.refined_ll,
            ensemble_applied=decision.applied,
            ensemble_note=decision.note,
            prompts=prompts,
        )
