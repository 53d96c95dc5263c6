"""Retrieval-feedback question answering: answer, retrieve with the answer, refine."""

__version__ = "0.1.0"
