"""
Client for OpenAI-compatible text-completion endpoints.

Request fields sent to POST {base_url}/completions:
    model, prompt, max_tokens, temperature, top_p, n, stop,
    logprobs (int, only when the endpoint supports them), echo (scoring only)
Response fields read from each choice:
    text, finish_reason, logprobs.tokens, logprobs.token_logprobs, logprobs.text_offset

Completion scoring sends prompt + completion with echo=true and keeps the
echoed tokens that overlap the completion span (located with text_offset).
Token strings are the server's sub-word pieces; joined without separators
they reconstruct the generated text.
"""
import asyncio
import json
import logging
import os

import aiohttp
from aiohttp_retry import JitterRetry, RetryClient

from refeed.backends.base import (
    FINISH_LENGTH,
    FINISH_OTHER,
    FINISH_STOP,
    BackendCapabilities,
    Generation,
    LanguageModel,
)
from refeed.errors import BackendError, ContextOverflowError, PreconditionError, RateLimitError, TransportError

logger = logging.getLogger(__name__)

RETRY_STATUSES = {429, 500, 502, 503, 504}
_FINISH_REASONS = {"stop": FINISH_STOP, "length": FINISH_LENGTH}


def estimate_tokens(text):
    """Rough sub-word count (about four characters per token)."""
    return len(text) // 4 + 1


class RequestThrottle:
    """Spaces request starts so at most requests_per_minute begin in any minute."""

    def __init__(self, requests_per_minute):
        self.interval = 60.0 / requests_per_minute if requests_per_minute else 0.0
        self._lock = asyncio.Lock()
        self._next_slot = 0.0

    async def wait(self):
        if not self.interval:
            return
        async with self._lock:
            now = asyncio.get_running_loop().time()
            delay = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + self.interval
        if delay > 0:
            await asyncio.sleep(delay)


class HttpCompletionsBackend(LanguageModel):
    name = "http"

    def __init__(
        self,
        base_url,
        model,
        api_key_env="OPENAI_API_KEY",
        supports_logprobs=True,
        supports_sampling=True,
        max_context_tokens=4096,
        max_in_flight=4,
        requests_per_minute=0,
        max_attempts=5,
        backoff_start=0.5,
        backoff_max=30.0,
        backoff_jitter=2.0,
        timeout=60.0,
        score_max_tokens=1,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self._capabilities = BackendCapabilities(
            supports_logprobs=supports_logprobs,
            supports_sampling=supports_sampling,
            max_context_tokens=max_context_tokens,
        )
        self.max_in_flight = max_in_flight
        self.requests_per_minute = requests_per_minute
        self.retry_options = JitterRetry(
            attempts=max_attempts,
            start_timeout=backoff_start,
            max_timeout=backoff_max,
            factor=2.0,
            random_interval_size=backoff_jitter,
            statuses=RETRY_STATUSES,
            exceptions={aiohttp.ClientError, asyncio.TimeoutError},
            methods={"POST"},
        )
        self.timeout = timeout
        self.score_max_tokens = score_max_tokens

        self._session = None
        self._client = None
        self._semaphore = None
        self._throttle = None

    @property
    def capabilities(self):
        return self._capabilities

    def _headers(self):
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _ensure_client(self):
        if self._client is None:
            self._session = aiohttp.ClientSession(timeout=aiohttp.ClientTimeout(total=self.timeout))
            self._client = RetryClient(client_session=self._session, retry_options=self.retry_options, raise_for_status=False)
            self._semaphore = asyncio.Semaphore(self.max_in_flight)
            self._throttle = RequestThrottle(self.requests_per_minute)
            logger.info(f"Opened completions client for model {self.model} at {self.base_url}")
        return self._client

    async def aclose(self):
        if self._client is not None:
            await self._client.close()
            if not self._session.closed:
                await self._session.close()
            self._client = None

    def _check_context(self, prompt):
        estimated = estimate_tokens(prompt)
        if estimated > self._capabilities.max_context_tokens:
            raise ContextOverflowError(estimated, self._capabilities.max_context_tokens)

    async def _post(self, payload):
        client = self._ensure_client()
        url = f"{self.base_url}/completions"
        async with self._semaphore:
            await self._throttle.wait()
            try:
                async with client.post(url, json=payload, headers=self._headers()) as response:
                    status = response.status
                    retry_after = response.headers.get("Retry-After")
                    body = await response.text()
            except (aiohttp.ClientError, asyncio.TimeoutError) as e:
                raise TransportError(f"Request to {url} failed: {e!r}") from e

        if status == 200:
            try:
                return json.loads(body)
            except ValueError as e:
                raise TransportError(f"Non-JSON body from {url}: {body[:200]!r}") from e
        if status == 429:
            try:
                delay = float(retry_after) if retry_after is not None else None
            except ValueError:
                delay = None
            raise RateLimitError(f"Rate limited by {url}", retry_after=delay)
        if status >= 500:
            raise TransportError(f"HTTP {status} from {url}: {body[:200]}")
        lowered = body.lower()
        if status == 400 and "context" in lowered and ("length" in lowered or "maximum" in lowered):
            raise ContextOverflowError(estimate_tokens(payload["prompt"]), self._capabilities.max_context_tokens)
        raise BackendError(f"HTTP {status} from {url}: {body[:200]}")

    def _payload(self, prompt, params, n=1):
        payload = {
            "model": self.model,
            "prompt": prompt,
            "max_tokens": params.max_tokens,
            "n": n,
        }
        if params.is_greedy:
            payload.update(temperature=0.0, top_p=1.0)
        else:
            payload.update(temperature=params.temperature, top_p=params.top_p)
        if params.stop_sequences:
            payload["stop"] = list(params.stop_sequences)
        if self._capabilities.supports_logprobs:
            payload["logprobs"] = 1
        return payload

    @staticmethod
    def _parse_choice(choice):
        try:
            token_logprobs = None
            logprobs = choice.get("logprobs")
            if logprobs and logprobs.get("tokens") is not None:
                tokens, values = logprobs["tokens"], logprobs["token_logprobs"]
                if len(tokens) != len(values):
                    raise ValueError(f"{len(tokens)} tokens but {len(values)} logprobs")
                token_logprobs = tuple((token, float(lp)) for token, lp in zip(tokens, values) if lp is not None)
            text = choice.get("text", "")
            if not isinstance(text, str):
                raise TypeError(f"text is {type(text).__name__}")
        except (AttributeError, KeyError, TypeError, ValueError) as e:
            raise BackendError(f"Malformed completion choice: {e!r}") from e
        return Generation(
            text=text,
            token_logprobs=token_logprobs,
            finish_reason=_FINISH_REASONS.get(choice.get("finish_reason"), FINISH_OTHER),
        )

    @staticmethod
    def _choices(data):
        choices = data.get("choices") if isinstance(data, dict) else None
        if not choices:
            raise BackendError("Completion response has no choices")
        if not isinstance(choices, list) or not all(isinstance(c, dict) for c in choices):
            raise BackendError("Completion response choices are not objects")
        return sorted(choices, key=lambda c: c.get("index", 0))

    async def generate(self, prompt, params):
        self._check_context(prompt)
        data = await self._post(self._payload(prompt, params))
        return self._parse_choice(self._choices(data)[0])

    async def sample_n(self, prompt, n, params):
        self._check_sampling(n, params)
        self._check_context(prompt)
        data = await self._post(self._payload(prompt, params, n=n))
        generations = [self._parse_choice(c) for c in self._choices(data)]
        if len(generations) != n:
            raise BackendError(f"Asked for {n} samples, endpoint returned {len(generations)}")
        return generations

    async def score_completion(self, prompt, completion):
        self._check_scoring(completion)
        if not completion.strip():
            raise PreconditionError("Cannot score a whitespace-only completion")
        joiner = "" if not prompt or prompt[-1].isspace() or completion[0].isspace() else " "
        full_text = prompt + joiner + completion
        self._check_context(full_text)
        data = await self._post({
            "model": self.model,
            "prompt": full_text,
            "max_tokens": self.score_max_tokens,
            "temperature": 0.0,
            "echo": True,
            "logprobs": 0,
        })
        start, end = len(prompt) + len(joiner), len(full_text)
        selected = []
        try:
            logprobs = self._choices(data)[0].get("logprobs") or {}
            tokens = logprobs.get("tokens") or []
            values = logprobs.get("token_logprobs") or []
            offsets = logprobs.get("text_offset") or []
            for i, (token, value, offset) in enumerate(zip(tokens, values, offsets)):
                token_end = offsets[i + 1] if i + 1 < len(offsets) else offset + len(token)
                if offset < end and token_end > start and value is not None:
                    selected.append(float(value))
        except (AttributeError, TypeError, ValueError) as e:
            raise BackendError(f"Malformed echoed logprobs: {e!r}") from e
        if not selected:
            raise BackendError("Echoed logprobs do not cover the completion")
        return sum(selected) / len(selected), len(selected)
