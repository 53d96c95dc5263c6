import hashlib
import json
import logging
import string
from dataclasses import dataclass, field, replace
from pathlib import Path

from refeed.errors import ConfigError, PreconditionError

logger = logging.getLogger(__name__)

TEMPLATES_DIR = Path(__file__).resolve().parent / "prompts"

PLACEHOLDERS = frozenset({"question", "passages", "candidates", "initial_answer", "shots"})
STAGES = ("initial", "refine", "cot_initial", "cot_refine", "read")


def template_fields(body):
    """Names of the {placeholders} used in body; positional fields are rejected."""
    names = set()
    for _, name, _, _ in string.Formatter().parse(body):
        if name is None:
            continue
        if not name.isidentifier():
            raise ConfigError(f"Template placeholder '{{{name}}}' must be a name")
        names.add(name)
    return names


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    shot_records: tuple = field(default_factory=tuple)

    def __post_init__(self):
        unknown = template_fields(self.body) - PLACEHOLDERS
        if unknown:
            raise ConfigError(f"Template '{self.name}' uses undeclared placeholders: {', '.join(sorted(unknown))}")

    @property
    def fields(self):
        return template_fields(self.body)

    def with_shots(self, shot_records):
        return replace(self, shot_records=tuple(shot_records))

    def render(self, **values):
        values.setdefault("shots", format_shots(self.shot_records))
        missing = self.fields - values.keys()
        if missing:
            raise PreconditionError(f"Template '{self.name}' is missing values for: {', '.join(sorted(missing))}")
        return self.body.format_map(values)

    @property
    def fingerprint(self):
        payload = json.dumps({"body": self.body, "shots": [list(s) for s in self.shot_records]}, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def format_shots(shot_records):
    return "".join(f"Question: {question}\nAnswer: {answer}\n\n" for question, answer in shot_records)


def format_passages(passages):
    return "\n\n".join(f"Passage {i}: {p.title}\n{p.text}" for i, p in enumerate(passages, start=1))


def format_candidates(candidates):
    return "\n".join(f"- {c.text}" for c in candidates)


def load_shots(path):
    """Read few-shot demonstrations: one {"question", "answer"} object per line."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Shots file not found: {path}")
    shots = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path} line {line_number}: malformed shot ({e.msg})") from e
            if not isinstance(record, dict):
                raise ConfigError(f"{path} line {line_number}: a shot must be a JSON object")
            if not isinstance(record.get("question"), str) or not isinstance(record.get("answer"), str):
                raise ConfigError(f"{path} line {line_number}: shots need string 'question' and 'answer'")
            shots.append((record["question"], record["answer"]))
    return tuple(shots)


def load_templates(directory=None, shot_records=()):
    """
    Load stage templates, letting files in directory override the shipped defaults.

    Each stage is read from `<stage>.txt`. The same shots are attached to
    every stage.
    """
    templates = {}
    for stage in STAGES:
        path = TEMPLATES_DIR / f"{stage}.txt"
        if directory is not None and (Path(directory) / f"{stage}.txt").exists():
            path = Path(directory) / f"{stage}.txt"
            logger.info(f"Using template override {path}")
        body = path.read_text(encoding="utf-8").rstrip()
        templates[stage] = PromptTemplate(name=stage, body=body, shot_records=tuple(shot_records))
    return templates
