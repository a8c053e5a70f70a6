"""Normalized Compression Distance over byte documents.

    NCD(x, y) = (C(xy) - min(C(x), C(y))) / max(C(x), C(y))

``C`` is the length of a real compressor's output. Single-document lengths
are cached per (document, compressor); concatenations are always compressed
fresh since they cannot be precomputed.
"""

from __future__ import annotations

import bz2
import enum
import gzip
import hashlib
import lzma
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import date
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

# Largest admissible NCD; real compressors overshoot 1 slightly.
NCD_EPSILON = 0.1

LZMA_DICT_SIZE = 1 << 20


class Label(str, enum.Enum):
    PHISHING = "phishing"
    LEGITIMATE = "legitimate"
    UNKNOWN = "unknown"


class CompressorError(RuntimeError):
    """Raised when a compressor fails on a document."""

    def __init__(self, doc_id: str, cause: Exception):
        super().__init__(f"compression failed for document {doc_id!r}: {cause}")
        self.doc_id = doc_id


class NcdRangeError(ValueError):
    pass


class Kind(str, enum.Enum):
    LZMA = "lzma"
    ZLIB = "zlib"
    GZIP = "gzip"
    BZ2 = "bz2"


DEFAULT_LEVELS = {
    Kind.LZMA: 6,  # LZMA2 preset, raw stream, 1 MiB dictionary
    Kind.ZLIB: 9,
    Kind.GZIP: 9,  # mtime pinned to 0
    Kind.BZ2: 9,
}


@dataclass(frozen=True)
class CompressorKind:
    name: Kind
    level: int

    @classmethod
    def of(cls, name: str | Kind, level: int | None = None) -> "CompressorKind":
        kind = Kind(name)
        return cls(kind, DEFAULT_LEVELS[kind] if level is None else level)

    @classmethod
    def all(cls) -> list["CompressorKind"]:
        return [cls.of(k) for k in Kind]

    @property
    def label(self) -> str:
        return f"{self.name.value}-{self.level}"

    def compress(self, data: bytes) -> bytes:
        if self.name is Kind.LZMA:
            filters = [{"id": lzma.FILTER_LZMA2, "preset": self.level,
                        "dict_size": LZMA_DICT_SIZE}]
            return lzma.compress(data, format=lzma.FORMAT_RAW, filters=filters)
        if self.name is Kind.ZLIB:
            return zlib.compress(data, self.level)
        if self.name is Kind.GZIP:
            return gzip.compress(data, self.level, mtime=0)
        if self.name is Kind.BZ2:
            return bz2.compress(data, self.level)
        raise ValueError(f"unknown compressor {self.name}")

    def __str__(self) -> str:
        return self.label


DEFAULT_COMPRESSOR = CompressorKind.of(Kind.LZMA)


@dataclass(frozen=True)
class ByteDocument:
    id: str
    data: bytes
    source_path: str = ""
    label: Label = Label.UNKNOWN
    timestamp: date | None = None

    def __post_init__(self):
        if not self.data:
            raise ValueError(f"document {self.id!r} is empty")
        if not isinstance(self.label, Label):
            object.__setattr__(self, "label", Label(self.label))

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(self.data).hexdigest()

    def __len__(self) -> int:
        return len(self.data)


@dataclass(frozen=True, order=True)
class NcdValue:
    value: float
    compressor: CompressorKind = field(compare=False)

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0 + NCD_EPSILON):
            raise NcdRangeError(
                f"NCD {self.value!r} outside [0, {1 + NCD_EPSILON}] ({self.compressor})")

    def __float__(self) -> float:
        return self.value


class CompressionStats:
    """Thread-safe call counters, used to check evaluation budgets."""

    def __init__(self):
        self._lock = threading.Lock()
        self.reset()

    def reset(self):
        with self._lock:
            self.single = 0
            self.concat = 0
            self.ncd_evaluations = 0

    def bump(self, attr: str, n: int = 1):
        with self._lock:
            setattr(self, attr, getattr(self, attr) + n)

    def snapshot(self) -> dict:
        with self._lock:
            return {"single": self.single, "concat": self.concat,
                    "ncd_evaluations": self.ncd_evaluations}


STATS = CompressionStats()


@contextmanager
def counting() -> Iterator[CompressionStats]:
    """Reset the global counters for the duration of a block."""
    STATS.reset()
    yield STATS


class LengthCache:
    """Compressed lengths keyed by (doc id, content digest, compressor).

    The digest guards against two corpora reusing the same id for different
    bytes within one process.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._lens: dict[tuple[str, str, CompressorKind], int] = {}

    def get(self, doc: ByteDocument, c: CompressorKind) -> int | None:
        return self._lens.get((doc.id, doc.digest, c))

    def put(self, doc: ByteDocument, c: CompressorKind, length: int) -> int:
        with self._lock:
            return self._lens.setdefault((doc.id, doc.digest, c), length)

    def clear(self):
        with self._lock:
            self._lens.clear()

    def __len__(self) -> int:
        return len(self._lens)


CACHE = LengthCache()


def _compress_len(data: bytes, c: CompressorKind, doc_id: str) -> int:
    try:
        return len(c.compress(data))
    except Exception as exc:  # compressor internals vary by kind
        raise CompressorError(doc_id, exc) from exc


def compressed_len(doc: ByteDocument, c: CompressorKind = DEFAULT_COMPRESSOR,
                   cache: LengthCache | None = CACHE) -> int:
    if cache is not None:
        hit = cache.get(doc, c)
        if hit is not None:
            return hit
    n = _compress_len(doc.data, c, doc.id)
    STATS.bump("single")
    if cache is not None:
        n = cache.put(doc, c, n)
    return n


def canonical_pair(x: ByteDocument, y: ByteDocument) -> tuple[ByteDocument, ByteDocument]:
    """Order operands by (length, bytes) so concatenation is order-free."""
    if (len(y.data), y.data) < (len(x.data), x.data):
        return y, x
    return x, y


def ncd_from_lengths(x: ByteDocument, cx: int, y: ByteDocument, cy: int,
                     c: CompressorKind) -> NcdValue:
    a, b = canonical_pair(x, y)
    cxy = _compress_len(a.data + b.data, c, f"{a.id}+{b.id}")
    STATS.bump("concat")
    STATS.bump("ncd_evaluations")
    return NcdValue((cxy - min(cx, cy)) / max(cx, cy), c)


def ncd(x: ByteDocument, y: ByteDocument, c: CompressorKind = DEFAULT_COMPRESSOR,
        cache: LengthCache | None = CACHE) -> NcdValue:
    return ncd_from_lengths(x, compressed_len(x, c, cache), y, compressed_len(y, c, cache), c)


def pmap(fn, items: Sequence, workers: int = 1) -> list:
    """Order-preserving map; threads help because the codecs release the GIL."""
    if workers <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def ncd_matrix(docs: Sequence[ByteDocument], c: CompressorKind = DEFAULT_COMPRESSOR,
               cache: LengthCache | None = CACHE, workers: int = 1) -> np.ndarray:
    """Full pairwise NCD matrix, diagonal included (self-distance is not 0)."""
    if len(docs) < 2:
        raise ValueError("ncd_matrix needs at least 2 documents")
    ids = [d.id for d in docs]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate document ids: {dupes}")

    lens = pmap(lambda d: compressed_len(d, c, cache), list(docs), workers)
    n = len(docs)
    cells = [(i, j) for i in range(n) for j in range(i, n)]
    values = pmap(lambda ij: ncd_from_lengths(docs[ij[0]], lens[ij[0]],
                                              docs[ij[1]], lens[ij[1]], c).value,
                  cells, workers)
    m = np.empty((n, n), dtype=float)
    for (i, j), v in zip(cells, values):
        m[i, j] = m[j, i] = v
    return m
