"""Exception hierarchy shared by every stage of the refeed package."""


class RefeedError(Exception):
    """Base class for all errors raised by this package."""


class PreconditionError(RefeedError, ValueError):
    """An operation was called with arguments outside its contract."""


class ConfigError(RefeedError):
    pass


# Corpus store

class IngestionError(RefeedError):
    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class DuplicateDocumentError(IngestionError):
    pass


class PassageNotFoundError(RefeedError, KeyError):
    def __init__(self, passage_id):
        self.passage_id = passage_id
        super().__init__(f"Passage not found: {passage_id}")

    def __str__(self):
        return self.args[0]


class DatasetSchemaError(RefeedError):
    def __init__(self, line_number, message):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class DatasetKindError(DatasetSchemaError):
    pass


# Index

class EmptyCorpusError(RefeedError):
    pass


class IndexFormatError(RefeedError):
    pass


# Language-model backends

class BackendError(RefeedError):
    """Failure reported by a language-model backend."""

    retryable = False


class TransportError(BackendError):
    retryable = True


class RateLimitError(BackendError):
    retryable = True

    def __init__(self, message, retry_after=None):
        self.retry_after = retry_after
        super().__init__(message)


class ContextOverflowError(BackendError):
    def __init__(self, prompt_tokens, limit):
        self.prompt_tokens = prompt_tokens
        self.limit = limit
        super().__init__(f"Prompt of {prompt_tokens} tokens exceeds the context limit of {limit} tokens")


class CapabilityError(BackendError):
    pass


class ScriptError(RefeedError):
    """A scripted-backend script failed validation."""


# Pipeline and evaluation

class StageError(RefeedError):
    def __init__(self, stage, question_id, cause):
        self.stage = stage
        self.question_id = question_id
        self.cause = cause
        super().__init__(f"[{stage}] question {question_id}: {cause}")


class TraceMismatchError(RefeedError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"Trace ids absent from dataset: {', '.join(self.ids)}")


class TraceFormatError(RefeedError):
    pass
