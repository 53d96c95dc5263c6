import abc
from dataclasses import dataclass, field

from refeed.errors import CapabilityError, PreconditionError

GREEDY = "greedy"
NUCLEUS = "nucleus"

FINISH_STOP = "stop"
FINISH_LENGTH = "length"
FINISH_OTHER = "other"


@dataclass(frozen=True)
class DecodeParams:
    mode: str = GREEDY
    top_p: float = 1.0
    temperature: float = 1.0
    max_tokens: int = 64
    stop_sequences: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.mode not in (GREEDY, NUCLEUS):
            raise PreconditionError(f"Unknown decoding mode '{self.mode}'")
        if not 0.0 < self.top_p <= 1.0:
            raise PreconditionError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.temperature <= 0:
            raise PreconditionError(f"temperature must be > 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise PreconditionError(f"max_tokens must be >= 1, got {self.max_tokens}")
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))

    @classmethod
    def greedy(cls, max_tokens=64, stop_sequences=()):
        return cls(mode=GREEDY, max_tokens=max_tokens, stop_sequences=stop_sequences)

    @classmethod
    def nucleus(cls, top_p=0.95, temperature=1.0, max_tokens=64, stop_sequences=()):
        return cls(mode=NUCLEUS, top_p=top_p, temperature=temperature, max_tokens=max_tokens, stop_sequences=stop_sequences)

    @property
    def is_greedy(self):
        return self.mode == GREEDY

    def to_record(self):
        return {
            "mode": self.mode,
            "top_p": self.top_p,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "stop_sequences": list(self.stop_sequences),
        }

    @classmethod
    def from_record(cls, record):
        return cls(**{**record, "stop_sequences": tuple(record.get("stop_sequences", ()))})


@dataclass(frozen=True)
class Generation:
    text: str
    token_logprobs: tuple = None
    finish_reason: str = FINISH_STOP

    @property
    def mean_logprob(self):
        if not self.token_logprobs:
            return None
        return sum(lp for _, lp in self.token_logprobs) / len(self.token_logprobs)


@dataclass(frozen=True)
class BackendCapabilities:
    supports_logprobs: bool = True
    supports_sampling: bool = True
    max_context_tokens: int = 4096

    def __post_init__(self):
        if self.max_context_tokens < 1:
            raise PreconditionError("max_context_tokens must be >= 1")


class LanguageModel(abc.ABC):
    """
    Uniform async interface over text-generation backends.

    Implementations must be safe to call from many concurrent tasks.
    """

    name = "abstract"

    @property
    @abc.abstractmethod
    def capabilities(self):
        ...

    @abc.abstractmethod
    async def generate(self, prompt, params):
        """Return one Generation for prompt under params."""

    async def sample_n(self, prompt, n, params):
        """Return exactly n nucleus-sampled Generations."""
        self._check_sampling(n, params)
        return [await self.generate(prompt, params) for _ in range(n)]

    @abc.abstractmethod
    async def score_completion(self, prompt, completion):
        """Return (mean_logprob, num_tokens) of completion conditioned on prompt."""

    def _check_sampling(self, n, params):
        if n < 1:
            raise PreconditionError(f"n must be >= 1, got {n}")
        if params.mode != NUCLEUS:
            raise PreconditionError("sample_n requires nucleus decoding parameters")
        if not self.capabilities.supports_sampling:
            raise CapabilityError(f"Backend '{self.name}' does not support sampling")

    def _check_scoring(self, completion):
        if not self.capabilities.supports_logprobs:
            raise CapabilityError(f"Backend '{self.name}' does not expose log-probabilities")
        if not completion:
            raise PreconditionError("Cannot score an empty completion")

    async def aclose(self):
        pass

    async def __aenter__(self):
        return self

    async def __aexit__(self, *exc_info):
        await self.aclose()
