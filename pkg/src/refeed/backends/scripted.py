"""
Deterministic scripted backend for tests and offline replays.

Script file schema (JSON object):

    {
      "name": "fixture",                  optional
      "max_context_tokens": 2048,         optional, whitespace tokens
      "supports_logprobs": true,          optional
      "supports_sampling": true,          optional
      "default_logprob": -1.0,            per-token logprob when nothing more specific applies
      "sample_order": "fixed",            or "shuffled" (rotation permuted once with the seed)
      "rules": [
        {"match": "prompt substring", "completion": "text",
         "logprobs": [-0.1, -0.2],        optional, one per whitespace token of completion
         "token_logprob": -0.5,           optional, constant for anything scored under this rule
         "samples": ["a", "b", "c"]}      optional nucleus rotation, defaults to [completion]
      ],
      "scores": [
        {"match": "prompt substring", "completion": "text", "logprobs": [-0.3]}
      ],
      "default": {"completion": "text", ...}   required, same fields as a rule minus "match"
    }

Rules are tried in order and the first whose "match" occurs in the prompt
wins; the default rule matches everything. Tokens are whitespace tokens, so a
Generation's tokens joined by single spaces reconstruct its text.
"""
import json
import logging
import random
import threading
from dataclasses import dataclass
from pathlib import Path

from refeed.backends.base import FINISH_STOP, BackendCapabilities, Generation, LanguageModel
from refeed.errors import ContextOverflowError, PreconditionError, ScriptError

logger = logging.getLogger(__name__)

DEFAULT_LOGPROB = -1.0


@dataclass(frozen=True)
class ScriptRule:
    match: str
    completion: str
    logprobs: tuple = None
    token_logprob: float = None
    samples: tuple = ()

    @property
    def rotation(self):
        return self.samples or (self.completion,)


@dataclass(frozen=True)
class ScoreRule:
    match: str
    completion: str
    logprobs: tuple


def _check_logprobs(logprobs, text, where):
    if logprobs is None:
        return None
    logprobs = tuple(float(lp) for lp in logprobs)
    if len(logprobs) != len(text.split()):
        raise ScriptError(f"{where}: {len(logprobs)} logprobs for {len(text.split())} tokens of '{text}'")
    if any(lp > 0 for lp in logprobs):
        raise ScriptError(f"{where}: logprobs must be <= 0")
    return logprobs


def _parse_rule(record, where, default=False):
    if not isinstance(record, dict) or not isinstance(record.get("completion"), str):
        raise ScriptError(f"{where}: rule needs a string 'completion'")
    match = "" if default else record.get("match")
    if not isinstance(match, str):
        raise ScriptError(f"{where}: rule needs a string 'match'")
    token_logprob = record.get("token_logprob")
    if token_logprob is not None and token_logprob > 0:
        raise ScriptError(f"{where}: token_logprob must be <= 0")
    return ScriptRule(
        match=match,
        completion=record["completion"],
        logprobs=_check_logprobs(record.get("logprobs"), record["completion"], where),
        token_logprob=token_logprob,
        samples=tuple(record.get("samples") or ()),
    )


class ScriptedBackend(LanguageModel):
    """Replays a fixed script; outputs depend only on (script, prompt, params, call index)."""

    name = "scripted"

    def __init__(
        self,
        rules=(),
        default=None,
        scores=(),
        default_logprob=DEFAULT_LOGPROB,
        max_context_tokens=2048,
        supports_logprobs=True,
        supports_sampling=True,
        sample_order="fixed",
        seed=0,
        name=None,
    ):
        if default is None:
            raise ScriptError("A scripted backend needs a default rule")
        if sample_order not in ("fixed", "shuffled"):
            raise ScriptError(f"Unknown sample_order '{sample_order}'")
        self.rules = tuple(rules)
        self.default = default
        self.scores = tuple(scores)
        self.default_logprob = float(default_logprob)
        self._capabilities = BackendCapabilities(
            supports_logprobs=supports_logprobs,
            supports_sampling=supports_sampling,
            max_context_tokens=max_context_tokens,
        )
        if name:
            self.name = name

        self._rotations = {}
        rng = random.Random(seed)
        for rule in (*self.rules, self.default):
            rotation = list(rule.rotation)
            if sample_order == "shuffled":
                rng.shuffle(rotation)
            self._rotations[id(rule)] = tuple(rotation)

        self._lock = threading.Lock()
        self._sample_calls = {}
        self.calls = []

    @classmethod
    def from_dict(cls, script, seed=0):
        if not isinstance(script, dict):
            raise ScriptError("Script must be a JSON object")
        if "default" not in script:
            raise ScriptError("Script is missing the required 'default' rule")
        rules = [_parse_rule(r, f"rules[{i}]") for i, r in enumerate(script.get("rules", []))]
        default = _parse_rule(script["default"], "default", default=True)
        scores = []
        for i, record in enumerate(script.get("scores", [])):
            where = f"scores[{i}]"
            if not isinstance(record.get("match"), str) or not isinstance(record.get("completion"), str):
                raise ScriptError(f"{where}: needs string 'match' and 'completion'")
            if record.get("logprobs") is None:
                raise ScriptError(f"{where}: needs 'logprobs'")
            scores.append(ScoreRule(record["match"], record["completion"], _check_logprobs(record["logprobs"], record["completion"], where)))

        return cls(
            rules=rules,
            default=default,
            scores=scores,
            default_logprob=script.get("default_logprob", DEFAULT_LOGPROB),
            max_context_tokens=script.get("max_context_tokens", 2048),
            supports_logprobs=script.get("supports_logprobs", True),
            supports_sampling=script.get("supports_sampling", True),
            sample_order=script.get("sample_order", "fixed"),
            seed=seed,
            name=script.get("name"),
        )

    @classmethod
    def from_file(cls, path, seed=0):
        path = Path(path)
        try:
            script = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ScriptError(f"Cannot load script {path}: {e}") from e
        backend = cls.from_dict(script, seed=seed)
        logger.info(f"Loaded scripted backend '{backend.name}' with {len(backend.rules)} rules from {path}")
        return backend

    @property
    def capabilities(self):
        return self._capabilities

    def _match(self, prompt):
        for rule in self.rules:
            if rule.match in prompt:
                return rule
        return self.default

    def _check_context(self, prompt):
        num_tokens = len(prompt.split())
        if num_tokens > self._capabilities.max_context_tokens:
            raise ContextOverflowError(num_tokens, self._capabilities.max_context_tokens)

    def _logprobs_for(self, prompt, text):
        text = text.strip()
        for score in self.scores:
            if score.match in prompt and score.completion == text:
                return score.logprobs
        matching = [rule for rule in (*self.rules, self.default) if rule.match in prompt]
        for rule in matching:
            if rule.logprobs is not None and rule.completion == text:
                return rule.logprobs
        constant = matching[0].token_logprob if matching[0].token_logprob is not None else self.default_logprob
        return tuple(constant for _ in text.split())

    def _generation(self, prompt, text):
        token_logprobs = None
        if self._capabilities.supports_logprobs:
            token_logprobs = tuple(zip(text.split(), self._logprobs_for(prompt, text)))
        return Generation(text=text, token_logprobs=token_logprobs, finish_reason=FINISH_STOP)

    def _record(self, kind, prompt):
        with self._lock:
            self.calls.append((kind, prompt))

    async def generate(self, prompt, params):
        self._check_context(prompt)
        rule = self._match(prompt)
        if params.is_greedy:
            text = rule.completion
        else:
            rotation = self._rotations[id(rule)]
            with self._lock:
                count = self._sample_calls.get(prompt, 0)
                self._sample_calls[prompt] = count + 1
            text = rotation[count % len(rotation)]
        self._record("generate", prompt)
        return self._generation(prompt, text)

    async def sample_n(self, prompt, n, params):
        self._check_sampling(n, params)
        self._check_context(prompt)
        rotation = self._rotations[id(self._match(prompt))]
        self._record("sample_n", prompt)
        return [self._generation(prompt, rotation[i % len(rotation)]) for i in range(n)]

    async def score_completion(self, prompt, completion):
        self._check_scoring(completion)
        if not completion.split():
            raise PreconditionError("Cannot score a whitespace-only completion")
        self._check_context(prompt)
        self._record("score", prompt)
        logprobs = self._logprobs_for(prompt, completion)
        return sum(logprobs) / len(logprobs), len(logprobs)
