"""Furthest-Point-First prototype extraction and nearest-prototype classification.

Prototypes are real samples. Extraction greedily picks the document furthest
from every prototype chosen so far until each remaining document lies within
the distance threshold of some prototype. Ties (including the all-infinite
first round) go to the smallest document id.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Mapping, Sequence

from .ncd import (
    CACHE,
    DEFAULT_COMPRESSOR,
    ByteDocument,
    CompressorKind,
    Label,
    LengthCache,
    NcdValue,
    compressed_len,
    ncd_from_lengths,
    pmap,
)

DEFAULT_THRESHOLD = 0.251


@dataclass(frozen=True)
class Threshold:
    d: float = DEFAULT_THRESHOLD

    def __post_init__(self):
        if not 0.0 < self.d < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.d}")

    def __float__(self) -> float:
        return self.d


class Decision(str, enum.Enum):
    PHISHING = "phishing"
    NON_PHISHING = "non-phishing"


@dataclass(frozen=True)
class PrototypeSet:
    prototypes: tuple[ByteDocument, ...]
    compressor: CompressorKind = DEFAULT_COMPRESSOR
    threshold: Threshold = Threshold()
    cached_lens: Mapping[str, int] = field(default_factory=dict)
    created_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc),
                                 compare=False)

    def __post_init__(self):
        object.__setattr__(self, "prototypes", tuple(self.prototypes))
        missing = [p.id for p in self.prototypes if p.id not in self.cached_lens]
        if missing:
            raise ValueError(f"cached_lens lacks prototypes {missing[:5]}")

    @classmethod
    def build(cls, prototypes: Sequence[ByteDocument], compressor: CompressorKind = DEFAULT_COMPRESSOR,
              threshold: Threshold = Threshold(), cache: LengthCache | None = CACHE,
              created_at: datetime | None = None) -> "PrototypeSet":
        lens = {p.id: compressed_len(p, compressor, cache) for p in prototypes}
        kw = {} if created_at is None else {"created_at": created_at}
        return cls(tuple(prototypes), compressor, threshold, lens, **kw)

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.prototypes]

    def __len__(self) -> int:
        return len(self.prototypes)

    def __iter__(self):
        return iter(self.prototypes)


@dataclass(frozen=True)
class Membership:
    prototype_id: str
    distance: NcdValue


# member id -> nearest prototype at extraction termination
Assignment = dict[str, Membership]


@dataclass(frozen=True)
class Verdict:
    doc_id: str
    decision: Decision
    nearest_prototype: str | None
    min_distance: NcdValue
    true_label: Label | None = None

    @property
    def is_phishing(self) -> bool:
        return self.decision is Decision.PHISHING

    @property
    def score(self) -> float:
        return -self.min_distance.value


def _check_ids(docs: Sequence[ByteDocument]):
    ids = [d.id for d in docs]
    if len(set(ids)) != len(ids):
        raise ValueError("document ids must be unique")


def extract_prototypes(data: Sequence[ByteDocument], t: Threshold = Threshold(),
                       c: CompressorKind = DEFAULT_COMPRESSOR, cache: LengthCache | None = CACHE,
                       workers: int = 1) -> tuple[PrototypeSet, Assignment]:
    if not data:
        raise ValueError("cannot extract prototypes from empty data")
    _check_ids(data)
    remaining = sorted(data, key=lambda d: d.id)
    lens = {d.id: compressed_len(d, c, cache) for d in remaining}
    distance = {d.id: math.inf for d in remaining}
    cluster: dict[str, tuple[str, NcdValue]] = {}
    prototypes: list[ByteDocument] = []

    while remaining and max(distance[d.id] for d in remaining) > t.d:
        # strict > keeps the smallest id among equal maxima (remaining is id-sorted)
        z = remaining[0]
        for d in remaining[1:]:
            if distance[d.id] > distance[z.id]:
                z = d
        prototypes.append(z)
        remaining = [d for d in remaining if d is not z]
        distance.pop(z.id)
        cluster.pop(z.id, None)
        values = pmap(lambda x: ncd_from_lengths(x, lens[x.id], z, lens[z.id], c),
                      remaining, workers)
        for x, v in zip(remaining, values):
            if distance[x.id] > v.value:
                distance[x.id] = v.value
                cluster[x.id] = (z.id, v)

    ps = PrototypeSet(tuple(prototypes), c, t, {p.id: lens[p.id] for p in prototypes})
    assignment = {x.id: Membership(*cluster[x.id]) for x in remaining}
    return ps, assignment


def classify(doc: ByteDocument, ps: PrototypeSet, cache: LengthCache | None = CACHE,
             workers: int = 1) -> Verdict:
    if not len(ps):
        raise ValueError("prototype set is empty")
    c = ps.compressor
    cx = compressed_len(doc, c, cache)
    values = pmap(lambda p: ncd_from_lengths(doc, cx, p, ps.cached_lens[p.id], c),
                  ps.prototypes, workers)
    best, best_v = None, None
    for p, v in zip(ps.prototypes, values):
        if best is None or (v.value, p.id) < (best_v.value, best.id):
            best, best_v = p, v
    decision = Decision.PHISHING if best_v.value < ps.threshold.d else Decision.NON_PHISHING
    return Verdict(doc.id, decision, best.id, best_v, doc.label)


def classify_many(docs: Sequence[ByteDocument], ps: PrototypeSet,
                  cache: LengthCache | None = CACHE, workers: int = 1) -> list[Verdict]:
    return pmap(lambda d: classify(d, ps, cache), list(docs), workers)


def union(ps: PrototypeSet, new: PrototypeSet) -> PrototypeSet:
    if not len(new):
        return ps
    clash = set(ps.cached_lens) & set(new.cached_lens)
    if clash:
        raise ValueError(f"prototype ids already present: {sorted(clash)[:5]}")
    lens = dict(ps.cached_lens)
    lens.update(new.cached_lens)
    return PrototypeSet(ps.prototypes + new.prototypes, ps.compressor, ps.threshold, lens)


def incremental_update(batch: Sequence[ByteDocument], ps: PrototypeSet,
                       cache: LengthCache | None = CACHE, workers: int = 1
                       ) -> tuple[PrototypeSet, list[Verdict]]:
    """Classify ``batch`` then learn prototypes from its missed phishing pages.

    Only false negatives (labeled phishing, classified non-phishing) feed
    extraction; the input set is never modified.
    """
    verdicts = classify_many(batch, ps, cache, workers)
    by_id = {d.id: d for d in batch}
    rejected = [by_id[v.doc_id] for v in verdicts
                if by_id[v.doc_id].label is Label.PHISHING and not v.is_phishing]
    if not rejected:
        return ps, verdicts
    new, _ = extract_prototypes(rejected, ps.threshold, ps.compressor, cache, workers)
    return union(ps, new), verdicts
