import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

from refeed.errors import DuplicateDocumentError, IngestionError, PassageNotFoundError, PreconditionError

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 100
PASSAGES_FILE = "passages.jsonl"
MANIFEST_FILE = "manifest.json"
STAGING_SUFFIX = ".partial"
STORE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    text: str
    source_doc: str
    offset: int

    def to_record(self):
        return asdict(self)

    @classmethod
    def from_record(cls, record):
        return cls(
            id=record["id"],
            title=record.get("title", ""),
            text=record["text"],
            source_doc=record["source_doc"],
            offset=int(record["offset"]),
        )


@dataclass(frozen=True)
class CorpusStats:
    num_raw_docs: int = 0
    num_passages: int = 0
    total_tokens: int = 0


def whitespace_tokens(text):
    """Maximal non-whitespace runs, the unit passages are measured in."""
    return text.split()


def chunk_document(doc_id, title, text, chunk_size=DEFAULT_CHUNK_SIZE):
    """Split one raw document into consecutive passages of at most chunk_size tokens."""
    if chunk_size < 1:
        raise PreconditionError(f"chunk_size must be >= 1, got {chunk_size}")
    tokens = whitespace_tokens(text)
    passages = []
    for offset, start in enumerate(range(0, len(tokens), chunk_size)):
        passages.append(Passage(
            id=f"{doc_id}#{offset}",
            title=title,
            text=" ".join(tokens[start:start + chunk_size]),
            source_doc=doc_id,
            offset=offset,
        ))
    return passages


def _parse_raw_record(line, line_number):
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise IngestionError(line_number, f"malformed record ({e.msg})") from e
    if not isinstance(record, dict):
        raise IngestionError(line_number, "record is not an object")

    for field in ("id", "text"):
        value = record.get(field)
        if not isinstance(value, str):
            raise IngestionError(line_number, f"missing or non-string field '{field}'")
    if not record["id"].strip():
        raise IngestionError(line_number, "empty field 'id'")

    title = record.get("title") or ""
    if not isinstance(title, str):
        raise IngestionError(line_number, "non-string field 'title'")
    return record["id"], title, record["text"]


def ingest_corpus(lines, out_dir, chunk_size=DEFAULT_CHUNK_SIZE):
    """
    Chunk a line-delimited raw corpus into passages and persist them.

    Writes passages.jsonl and manifest.json under out_dir and returns the
    CorpusStats recorded in the manifest.
    """
    if chunk_size < 1:
        raise PreconditionError(f"chunk_size must be >= 1, got {chunk_size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    seen_ids = set()
    num_raw_docs = num_passages = total_tokens = 0

    # An existing store is replaced only after every line has parsed.
    staged_passages = out_dir / (PASSAGES_FILE + STAGING_SUFFIX)
    staged_manifest = out_dir / (MANIFEST_FILE + STAGING_SUFFIX)
    try:
        with open(staged_passages, "w", encoding="utf-8", newline="\n") as out:
            for line_number, line in enumerate(lines, start=1):
                if not line.strip():
                    continue
                doc_id, title, text = _parse_raw_record(line, line_number)
                if doc_id in seen_ids:
                    raise DuplicateDocumentError(line_number, f"duplicate document id '{doc_id}'")
                seen_ids.add(doc_id)

                passages = chunk_document(doc_id, title, text, chunk_size)
                if not passages:
                    logger.warning(f"Document {doc_id} (line {line_number}) has no text; no passages written")
                for passage in passages:
                    out.write(json.dumps(passage.to_record(), ensure_ascii=False) + "\n")
                    total_tokens += len(whitespace_tokens(passage.text))
                num_raw_docs += 1
                num_passages += len(passages)

        stats = CorpusStats(num_raw_docs, num_passages, total_tokens)
        manifest = {**asdict(stats), "chunk_size": chunk_size, "format_version": STORE_FORMAT_VERSION}
        staged_manifest.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except BaseException:
        staged_passages.unlink(missing_ok=True)
        staged_manifest.unlink(missing_ok=True)
        raise
    staged_passages.replace(out_dir / PASSAGES_FILE)
    staged_manifest.replace(out_dir / MANIFEST_FILE)

    logger.info(f"Ingested {num_raw_docs} documents into {num_passages} passages ({total_tokens} tokens) at {out_dir}")
    return stats


def ingest_corpus_file(path, out_dir, chunk_size=DEFAULT_CHUNK_SIZE):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Raw corpus not found: {path}")
    with open(path, encoding="utf-8") as f:
        return ingest_corpus(f, out_dir, chunk_size)


class CorpusStore:
    """Read-only view of an ingested corpus directory."""

    def __init__(self, passages, stats, chunk_size=DEFAULT_CHUNK_SIZE, root=None):
        self._passages = {p.id: p for p in passages}
        self.stats = stats
        self.chunk_size = chunk_size
        self.root = root

    @classmethod
    def open(cls, root):
        root = Path(root)
        manifest_path = root / MANIFEST_FILE
        if not manifest_path.exists():
            raise FileNotFoundError(f"Corpus manifest not found: {manifest_path}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

        passages = []
        with open(root / PASSAGES_FILE, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    passages.append(Passage.from_record(json.loads(line)))

        stats = CorpusStats(
            num_raw_docs=manifest["num_raw_docs"],
            num_passages=manifest["num_passages"],
            total_tokens=manifest["total_tokens"],
        )
        return cls(passages, stats, chunk_size=manifest.get("chunk_size", DEFAULT_CHUNK_SIZE), root=root)

    @classmethod
    def from_passages(cls, passages):
        passages = list(passages)
        stats = CorpusStats(
            num_raw_docs=len({p.source_doc for p in passages}),
            num_passages=len(passages),
            total_tokens=sum(len(whitespace_tokens(p.text)) for p in passages),
        )
        return cls(passages, stats)

    def get_passage(self, passage_id):
        try:
            return self._passages[passage_id]
        except KeyError:
            raise PassageNotFoundError(passage_id) from None

    def __contains__(self, passage_id):
        return passage_id in self._passages

    def __iter__(self):
        return iter(self._passages.values())

    def __len__(self):
        return len(self._passages)
