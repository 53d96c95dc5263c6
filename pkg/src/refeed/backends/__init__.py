from refeed.backends.base import (
    GREEDY,
    NUCLEUS,
    BackendCapabilities,
    DecodeParams,
    Generation,
    LanguageModel,
)
from refeed.backends.http import HttpCompletionsBackend
from refeed.backends.scripted import ScriptedBackend

__all__ = [
    "GREEDY",
    "NUCLEUS",
    "BackendCapabilities",
    "DecodeParams",
    "Generation",
    "HttpCompletionsBackend",
    "LanguageModel",
    "ScriptedBackend",
]
