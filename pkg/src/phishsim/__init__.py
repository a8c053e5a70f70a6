"""Compression-distance phishing page similarity."""

from .ncd import ByteDocument, CompressorKind, Label, NcdValue, compressed_len, ncd, ncd_matrix
from .prototypes import (
    PrototypeSet,
    Threshold,
    Verdict,
    classify,
    extract_prototypes,
    incremental_update,
)
from .sanitizer import SanitizedDocument, ingest_corpus, sanitize_html

__version__ = "0.1.0"

__all__ = [
    "ByteDocument", "CompressorKind", "Label", "NcdValue", "PrototypeSet", "SanitizedDocument",
    "Threshold", "Verdict", "classify", "compressed_len", "extract_prototypes",
    "incremental_update", "ingest_corpus", "ncd", "ncd_matrix", "sanitize_html",
]
