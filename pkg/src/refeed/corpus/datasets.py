import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from refeed.errors import DatasetKindError, DatasetSchemaError

logger = logging.getLogger(__name__)

QA = "qa"
DIALOGUE = "dialogue"
DATASET_KINDS = (QA, DIALOGUE)


@dataclass(frozen=True)
class QaExample:
    id: str
    question: str
    answers: tuple = field(default_factory=tuple)

    kind = QA

    @property
    def query_text(self):
        return self.question

    def to_record(self):
        return {"id": self.id, "question": self.question, "answers": list(self.answers)}


@dataclass(frozen=True)
class DialogueExample:
    id: str
    history: tuple = field(default_factory=tuple)
    reference: str = ""

    kind = DIALOGUE

    @property
    def query_text(self):
        # Oldest turn first, one turn per line.
        return "\n".join(self.history)

    def to_record(self):
        return {"id": self.id, "history": list(self.history), "reference": self.reference}


def _is_string_list(value):
    return isinstance(value, list) and all(isinstance(v, str) for v in value)


def _parse_qa(record, line_number):
    if "question" not in record and ("history" in record or "reference" in record):
        raise DatasetKindError(line_number, "dialogue record found in a qa dataset")
    question = record.get("question")
    if not isinstance(question, str) or not question.strip():
        raise DatasetSchemaError(line_number, "field 'question' must be a non-empty string")
    answers = record.get("answers")
    if not _is_string_list(answers) or not answers:
        raise DatasetSchemaError(line_number, "field 'answers' must be a non-empty array of strings")
    return QaExample(id=str(record["id"]), question=question, answers=tuple(answers))


def _parse_dialogue(record, line_number):
    if "reference" not in record and ("question" in record or "answers" in record):
        raise DatasetKindError(line_number, "qa record found in a dialogue dataset")
    history = record.get("history")
    if not _is_string_list(history):
        raise DatasetSchemaError(line_number, "field 'history' must be an array of strings")
    reference = record.get("reference")
    if not isinstance(reference, str) or not reference.strip():
        raise DatasetSchemaError(line_number, "field 'reference' must be a non-empty string")
    return DialogueExample(id=str(record["id"]), history=tuple(history), reference=reference)


_PARSERS = {QA: _parse_qa, DIALOGUE: _parse_dialogue}


def load_dataset(path, kind):
    """Parse a line-delimited QA or dialogue dataset, preserving file order."""
    if kind not in _PARSERS:
        raise DatasetKindError(0, f"unknown dataset kind '{kind}' (expected one of {', '.join(DATASET_KINDS)})")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset not found: {path}")

    parse = _PARSERS[kind]
    examples = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetSchemaError(line_number, f"malformed record ({e.msg})") from e
            if not isinstance(record, dict) or "id" not in record:
                raise DatasetSchemaError(line_number, "record must be an object with an 'id'")
            examples.append(parse(record, line_number))

    logger.info(f"Loaded {len(examples)} {kind} examples from {path}")
    return examples


def dump_dataset(examples, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for example in examples:
            f.write(json.dumps(example.to_record(), ensure_ascii=False) + "\n")
