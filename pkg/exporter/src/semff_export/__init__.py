"""Offline exporter for the fast-forward engine's ingestion formats."""

from .errors import BackboneError, ExportError, InputError
from .export import (ExportManifest, collect_corpus_tokens,
                     export_video_features, export_word_vectors)
from .formats import read_feature_file, write_feature_file

__all__ = [
    "BackboneError", "ExportError", "InputError", "ExportManifest",
    "collect_corpus_tokens", "export_video_features", "export_word_vectors",
    "read_feature_file", "write_feature_file",
]
