"""
Run configuration: one JSON file, overridable from the command line.

Precedence is flag > file > default. Relative paths in the file are resolved
against the file's own directory. API keys are never read from the file;
the backend reads the environment variable named by backend.api_key_env.
"""
import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

from refeed.backends.base import DecodeParams
from refeed.backends.http import HttpCompletionsBackend
from refeed.backends.scripted import ScriptedBackend
from refeed.corpus.datasets import DATASET_KINDS, QA
from refeed.corpus.store import MANIFEST_FILE
from refeed.errors import ConfigError, PreconditionError
from refeed.pipeline.refeed import MODE_FLAGS, MODES, REFEED_BASIC, PipelineConfig
from refeed.pipeline.templates import load_shots, load_templates
from refeed.retrieval.bm25 import INDEX_FILE

logger = logging.getLogger(__name__)

RESULTS_PATH = Path.cwd() / "results"

SCRIPTED = "scripted"
HTTP = "http"
BACKEND_KINDS = (SCRIPTED, HTTP)

_SECRET_KEYS = {"api_key", "apikey", "token", "authorization"}


@dataclass
class BackendConfig:
    kind: str = SCRIPTED
    script_path: Path = None
    base_url: str = None
    model: str = None
    api_key_env: str = "OPENAI_API_KEY"
    supports_logprobs: bool = True
    supports_sampling: bool = True
    max_context_tokens: int = 4096
    max_in_flight: int = 4
    requests_per_minute: int = 0
    max_attempts: int = 5
    timeout: float = 60.0


@dataclass
class PipelineSettings:
    k_docs: int = 10
    n_samples: int = 5
    top_p: float = 0.95
    temperature: float = 1.0
    max_tokens: int = 32
    cot_max_tokens: int = 256
    ensemble_scoring: str = "own_context"
    include_greedy_candidate: bool = True
    answer_marker: str = "So the answer is"


@dataclass
class RunConfig:
    corpus_dir: Path = None
    dataset_path: Path = None
    task: str = QA
    mode: str = REFEED_BASIC
    backend: BackendConfig = field(default_factory=BackendConfig)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    workers: int = 4
    output_dir: Path = None
    seed: int = 0
    strict: bool = False
    templates_dir: Path = None
    shots_path: Path = None
    allow_ensemble_fallback: bool = True

    def pipeline_config(self, mode=None):
        """PipelineConfig for mode (default: the configured one) built from these settings."""
        shots = load_shots(self.shots_path) if self.shots_path else ()
        try:
            return PipelineConfig.for_mode(
                mode or self.mode,
                **self.pipeline_overrides(),
                templates=load_templates(self.templates_dir, shots),
            )
        except PreconditionError as e:
            raise ConfigError(f"Invalid pipeline settings: {e}") from e

    def pipeline_overrides(self):
        settings = self.pipeline
        return {
            "k_docs": settings.k_docs,
            "n_samples": settings.n_samples,
            "decode_initial": DecodeParams.greedy(max_tokens=settings.max_tokens, stop_sequences=("\n",)),
            "decode_sample": DecodeParams.nucleus(
                top_p=settings.top_p,
                temperature=settings.temperature,
                max_tokens=settings.max_tokens,
                stop_sequences=("\n",),
            ),
            "decode_cot": DecodeParams.greedy(max_tokens=settings.cot_max_tokens, stop_sequences=("\n\n",)),
            "ensemble_scoring": settings.ensemble_scoring,
            "include_greedy_candidate": settings.include_greedy_candidate,
            "answer_marker": settings.answer_marker,
        }


def _path(value, base_dir):
    if value is None:
        return None
    path = Path(value).expanduser()
    return path if path.is_absolute() else base_dir / path


def _section(cls, record, where):
    if not isinstance(record, dict):
        raise ConfigError(f"'{where}' must be an object")
    secrets = _SECRET_KEYS & {key.lower() for key in record}
    if secrets:
        raise ConfigError(f"'{where}' must not carry credentials ({', '.join(sorted(secrets))}); "
                          "set the environment variable named by backend.api_key_env instead")
    known = {f.name for f in fields(cls)}
    unknown = set(record) - known
    if unknown:
        raise ConfigError(f"Unknown keys in '{where}': {', '.join(sorted(unknown))}")
    return record


def load_run_config(path=None, overrides=None):
    """
    Read a RunConfig from JSON (if given) and apply command-line overrides.

    overrides maps RunConfig or PipelineSettings field names to values;
    None values are ignored so unset flags keep the file's value.
    """
    record = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        base_dir = path.resolve().parent

    record = dict(_section(RunConfig, record, "config"))
    backend = BackendConfig(**_section(BackendConfig, record.pop("backend", {}), "backend"))
    backend.script_path = _path(backend.script_path, base_dir)
    pipeline = PipelineSettings(**_section(PipelineSettings, record.pop("pipeline", {}), "pipeline"))
    for key in ("corpus_dir", "dataset_path", "output_dir", "templates_dir", "shots_path"):
        record[key] = _path(record.get(key), base_dir)
    config = RunConfig(backend=backend, pipeline=pipeline, **record)

    run_keys = {f.name for f in fields(RunConfig)}
    pipeline_keys = {f.name for f in fields(PipelineSettings)}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in run_keys:
            setattr(config, key, value)
        elif key in pipeline_keys:
            setattr(config.pipeline, key, value)
        else:
            raise ConfigError(f"Unknown override '{key}'")

    if config.output_dir is None:
        config.output_dir = RESULTS_PATH / config.mode
    return config


def validate(config):
    """Check paths and settings; raises ConfigError before any backend call."""
    if config.mode not in MODE_FLAGS:
        raise ConfigError(f"Unknown mode '{config.mode}' (expected one of {', '.join(MODES)})")
    if config.task not in DATASET_KINDS:
        raise ConfigError(f"Unknown task '{config.task}' (expected one of {', '.join(DATASET_KINDS)})")
    if config.workers < 1:
        raise ConfigError(f"workers must be >= 1, got {config.workers}")
    if config.corpus_dir is None or not (Path(config.corpus_dir) / MANIFEST_FILE).exists():
        raise ConfigError(f"corpus_dir does not hold an ingested corpus: {config.corpus_dir}")
    if not (Path(config.corpus_dir) / INDEX_FILE).exists():
        raise ConfigError(f"No BM25 index in {config.corpus_dir}; run the index command first")
    if config.dataset_path is None or not Path(config.dataset_path).exists():
        raise ConfigError(f"Dataset not found: {config.dataset_path}")
    for name in ("templates_dir", "shots_path"):
        value = getattr(config, name)
        if value is not None and not Path(value).exists():
            raise ConfigError(f"{name} not found: {value}")

    backend = config.backend
    if backend.kind not in BACKEND_KINDS:
        raise ConfigError(f"Unknown backend kind '{backend.kind}' (expected one of {', '.join(BACKEND_KINDS)})")
    if backend.kind == SCRIPTED and (backend.script_path is None or not Path(backend.script_path).exists()):
        raise ConfigError(f"Scripted backend script not found: {backend.script_path}")
    if backend.kind == HTTP and (not backend.base_url or not backend.model):
        raise ConfigError("The http backend needs base_url and model")
    # Builds every template and decode parameter, surfacing bad values here.
    config.pipeline_config()
    return config


def build_backend(config):
    backend = config.backend
    if backend.kind == SCRIPTED:
        return ScriptedBackend.from_file(backend.script_path, seed=config.seed)
    return HttpCompletionsBackend(
        base_url=backend.base_url,
        model=backend.model,
        api_key_env=backend.api_key_env,
        supports_logprobs=backend.supports_logprobs,
        supports_sampling=backend.supports_sampling,
        max_context_tokens=backend.max_context_tokens,
        max_in_flight=backend.max_in_flight,
        requests_per_minute=backend.requests_per_minute,
        max_attempts=backend.max_attempts,
        timeout=backend.timeout,
    )


def check_capabilities(pipeline_config, capabilities, allow_ensemble_fallback=True):
    """Reject mode/backend mismatches; a tolerated ensemble fallback is logged once."""
    if pipeline_config.diverse and not capabilities.supports_sampling:
        raise ConfigError(f"Mode '{pipeline_config.mode}' samples answers but the backend cannot sample")
    if pipeline_config.ensemble and not capabilities.supports_logprobs:
        if not allow_ensemble_fallback:
            raise ConfigError(f"Mode '{pipeline_config.mode}' needs log-probabilities the backend does not expose")
        logger.warning("Backend exposes no log-probabilities; the ensemble step will keep the refined answer")


def run_fingerprint(pipeline_config, backend, config):
    return {
        **pipeline_config.fingerprint(),
        "backend": backend.name,
        "model": config.backend.model,
        "seed": config.seed,
    }
