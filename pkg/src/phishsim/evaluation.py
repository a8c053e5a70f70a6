"""Detection metrics, ROC analysis and the temporal evaluation protocols."""

from __future__ import annotations

import csv
import logging
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

from .ncd import (
    CACHE,
    DEFAULT_COMPRESSOR,
    ByteDocument,
    CompressorKind,
    Label,
    LengthCache,
    compressed_len,
    ncd_from_lengths,
    pmap,
)
from .prototypes import (
    Decision,
    PrototypeSet,
    Threshold,
    Verdict,
    classify,
    classify_many,
    extract_prototypes,
    incremental_update,
)

log = logging.getLogger(__name__)

PAUC_MAX_FPR = 0.05


@dataclass(frozen=True)
class Metrics:
    tpr: float
    fpr: float
    tnr: float
    accuracy: float
    gmean: float
    tp: int
    fn: int
    tn: int
    fp: int


def metrics_from_counts(tp: int, fn: int, tn: int, fp: int) -> Metrics:
    if tp + fn == 0:
        raise ValueError("no positive (phishing) instances")
    if tn + fp == 0:
        raise ValueError("no negative (legitimate) instances")
    tpr = tp / (tp + fn)
    fpr = fp / (tn + fp)
    tnr = tn / (tn + fp)
    acc = (tp + tn) / (tp + fn + tn + fp)
    return Metrics(tpr, fpr, tnr, acc, math.sqrt(tpr * tnr), tp, fn, tn, fp)


def confusion_metrics(verdicts: Sequence[Verdict]) -> Metrics:
    tp = fn = tn = fp = 0
    for v in verdicts:
        if v.true_label is Label.PHISHING:
            tp += v.is_phishing
            fn += not v.is_phishing
        elif v.true_label is Label.LEGITIMATE:
            fp += v.is_phishing
            tn += not v.is_phishing
        else:
            raise ValueError(f"verdict {v.doc_id} has no true label")
    return metrics_from_counts(tp, fn, tn, fp)


@dataclass(frozen=True)
class ScoredInstance:
    doc_id: str
    true_label: Label
    score: float

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"score for {self.doc_id} is not finite")

    @classmethod
    def from_verdict(cls, v: Verdict) -> "ScoredInstance":
        return cls(v.doc_id, v.true_label, v.score)


@dataclass
class RocResult:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # score cut-offs; +inf for the origin
    auc: float
    partial_auc: float
    partial_auc_normalized: float
    max_fpr: float
    eer_threshold: float
    eer_fpr: float
    eer_tpr: float

    def to_csv(self, path: str | Path, distance_space: bool = True):
        """Write ``fpr,tpr,threshold`` rows; thresholds as distances by default."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr", "threshold"])
            for f, t, th in zip(self.fpr, self.tpr, self.thresholds):
                th = -th if distance_space else th
                w.writerow([repr(float(f)), repr(float(t)), repr(float(th))])

    def summary(self) -> dict:
        return {
            "auc": self.auc,
            "partial_auc": self.partial_auc,
            "partial_auc_normalized": self.partial_auc_normalized,
            "partial_auc_max_fpr": self.max_fpr,
            "eer": {"score_threshold": self.eer_threshold,
                    "distance_threshold": -self.eer_threshold,
                    "fpr": self.eer_fpr, "tpr": self.eer_tpr},
        }


def roc(instances: Sequence[ScoredInstance], max_fpr: float | None = PAUC_MAX_FPR) -> RocResult:
    """Empirical ROC over every distinct score, higher score = more phishing-like."""
    scores = np.array([i.score for i in instances], dtype=float)
    pos = np.array([i.true_label is Label.PHISHING for i in instances])
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both phishing and legitimate instances")

    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], pos[order]
    # last index of each run of equal scores
    cut = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tps = np.cumsum(p)[cut]
    fps = np.cumsum(~p)[cut]
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thresholds = np.r_[np.inf, s[cut]]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))

    limit = 1.0 if max_fpr is None else float(max_fpr)
    if not 0 < limit <= 1:
        raise ValueError("max_fpr must lie in (0, 1]")
    pauc = _partial_area(fpr, tpr, limit)

    fnr = 1.0 - tpr
    gap = np.abs(fnr - fpr)
    e = int(np.argmin(gap))  # first minimum: highest cut-off among ties
    return RocResult(fpr, tpr, thresholds, auc, pauc, pauc / limit, limit,
                     float(thresholds[e]), float(fpr[e]), float(tpr[e]))


def _partial_area(fpr: np.ndarray, tpr: np.ndarray, limit: float) -> float:
    area = 0.0
    for i in range(1, len(fpr)):
        x0, x1 = fpr[i - 1], fpr[i]
        if x0 >= limit:
            break
        y0, y1 = tpr[i - 1], tpr[i]
        if x1 > limit:
            y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0)
            x1 = limit
        area += (x1 - x0) * (y0 + y1) / 2
    return float(area)


def temporal_split(docs: Sequence[ByteDocument], cutoff: date
                   ) -> tuple[list[ByteDocument], list[ByteDocument]]:
    """Phishing before ``cutoff`` trains; later phishing and all legitimate pages test."""
    train, test = [], []
    for d in docs:
        if d.label is Label.PHISHING:
            if d.timestamp is None:
                raise ValueError(f"phishing document {d.id} has no timestamp")
            (train if d.timestamp < cutoff else test).append(d)
        else:
            test.append(d)
    if not train:
        raise ValueError(f"no phishing documents before {cutoff}; training set is empty")
    if not any(d.label is Label.PHISHING for d in test):
        raise ValueError(f"no phishing documents on or after {cutoff}; test positives are empty")
    if not any(d.label is Label.LEGITIMATE for d in test):
        raise ValueError("no legitimate documents for testing")
    return train, test


@dataclass
class Iteration:
    week: str
    tpr: float | None
    fpr: float | None
    prototypes: int
    phishing_seen: int
    new_prototypes: int
    ratio: float
    verdicts: list[Verdict] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"week": self.week, "tpr": self.tpr, "fpr": self.fpr,
                "prototypes": self.prototypes, "phishing_seen": self.phishing_seen,
                "new_prototypes": self.new_prototypes, "ratio": self.ratio}


@dataclass
class EvaluationReport:
    metrics: Metrics
    roc: RocResult
    threshold: float
    compressor: str
    n_train: int
    n_test_phishing: int
    n_test_legitimate: int
    prototypes: int
    compression_ratio: float
    per_iteration: list[Iteration] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            **{k: v for k, v in asdict(self.metrics).items()},
            **self.roc.summary(),
            "threshold": self.threshold,
            "compressor": self.compressor,
            "n_train": self.n_train,
            "n_test_phishing": self.n_test_phishing,
            "n_test_legitimate": self.n_test_legitimate,
            "prototypes": self.prototypes,
            "compression_ratio": self.compression_ratio,
            "per_iteration": [it.to_dict() for it in self.per_iteration],
            "metadata": self.metadata,
        }
        return out

    def iterations_to_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["week", "tpr", "fpr", "prototypes", "ratio"])
            for it in self.per_iteration:
                w.writerow([it.week, "" if it.tpr is None else repr(it.tpr),
                            "" if it.fpr is None else repr(it.fpr),
                            it.prototypes, repr(it.ratio)])


def _report(verdicts: list[Verdict], ps: PrototypeSet, n_train: int, n_phishing_total: int,
            iterations: list[Iteration] | None = None) -> EvaluationReport:
    metrics = confusion_metrics(verdicts)
    curve = roc([ScoredInstance.from_verdict(v) for v in verdicts])
    return EvaluationReport(
        metrics=metrics, roc=curve, threshold=ps.threshold.d, compressor=ps.compressor.label,
        n_train=n_train, n_test_phishing=metrics.tp + metrics.fn,
        n_test_legitimate=metrics.tn + metrics.fp, prototypes=len(ps),
        compression_ratio=len(ps) / n_phishing_total if n_phishing_total else 0.0,
        per_iteration=iterations or [])


def evaluate_split(docs: Sequence[ByteDocument], cutoff: date, t: Threshold = Threshold(),
                   c: CompressorKind = DEFAULT_COMPRESSOR, cache: LengthCache | None = CACHE,
                   workers: int = 1, ps: PrototypeSet | None = None
                   ) -> tuple[EvaluationReport, PrototypeSet]:
    """Extract prototypes from pre-cutoff phishing pages and score the rest.

    A ready prototype set may be passed in, in which case extraction is
    skipped and only the test side of the split is used.
    """
    train, test = temporal_split(docs, cutoff)
    if ps is None:
        ps, _ = extract_prototypes(train, t, c, cache, workers)
    verdicts = classify_many(test, ps, cache, workers)
    return _report(verdicts, ps, len(train), len(train)), ps


def iso_week(d: date) -> str:
    year, week, _ = d.isocalendar()
    return f"{year}-W{week:02d}"


def weekly_buckets(docs: Sequence[ByteDocument]) -> list[tuple[str, list[ByteDocument]]]:
    buckets: dict[str, list[ByteDocument]] = {}
    for d in docs:
        if d.label is not Label.PHISHING:
            continue
        if d.timestamp is None:
            raise ValueError(f"phishing document {d.id} has no timestamp")
        buckets.setdefault(iso_week(d.timestamp), []).append(d)
    return sorted(buckets.items())


class _PoolTracker:
    """Running nearest-prototype state for the fixed legitimate pool.

    Each week only the newly added prototypes are compared, which yields the
    same verdicts as re-classifying the pool against the full set.
    """

    def __init__(self, pool: Sequence[ByteDocument], c: CompressorKind,
                 cache: LengthCache | None, workers: int):
        self.pool = list(pool)
        self.c, self.cache, self.workers = c, cache, workers
        self.lens = {d.id: compressed_len(d, c, cache) for d in self.pool}
        self.best: dict[str, tuple[float, str, object]] = {}

    def add(self, protos: Sequence[ByteDocument], proto_lens: dict[str, int]):
        if not protos:
            return

        def nearest(d):
            best = self.best.get(d.id)
            for p in protos:
                v = ncd_from_lengths(d, self.lens[d.id], p, proto_lens[p.id], self.c)
                if best is None or (v.value, p.id) < best[:2]:
                    best = (v.value, p.id, v)
            return best

        for d, b in zip(self.pool, pmap(nearest, self.pool, self.workers)):
            self.best[d.id] = b

    def verdicts(self, t: Threshold) -> list[Verdict]:
        out = []
        for d in self.pool:
            value, pid, v = self.best[d.id]
            decision = Decision.PHISHING if value < t.d else Decision.NON_PHISHING
            out.append(Verdict(d.id, decision, pid, v, d.label))
        return out


def run_incremental(docs: Sequence[ByteDocument], t: Threshold = Threshold(),
                    c: CompressorKind = DEFAULT_COMPRESSOR, cache: LengthCache | None = CACHE,
                    workers: int = 1) -> EvaluationReport:
    """Weekly classify-then-update loop over the phishing stream.

    The first week seeds the prototype set by extraction alone. Every later
    week is classified against the current set, together with the whole
    legitimate pool, before its missed phishing pages are learned.
    """
    weeks = weekly_buckets(docs)
    if len(weeks) < 2:
        raise ValueError(f"incremental evaluation needs >= 2 weekly buckets, got {len(weeks)}")
    legit = [d for d in docs if d.label is Label.LEGITIMATE]
    if not legit:
        raise ValueError("no legitimate documents for testing")

    first_week, first_docs = weeks[0]
    ps, _ = extract_prototypes(first_docs, t, c, cache, workers)
    pool = _PoolTracker(legit, c, cache, workers)
    pool.add(ps.prototypes, dict(ps.cached_lens))
    seen = len(first_docs)
    iterations = [Iteration(first_week, None, None, len(ps), seen, len(ps), len(ps) / seen)]
    all_verdicts: list[Verdict] = []

    for week, batch in weeks[1:]:
        legit_verdicts = pool.verdicts(t)
        new_ps, phish_verdicts = incremental_update(batch, ps, cache, workers)
        added = new_ps.prototypes[len(ps):]
        pool.add(added, dict(new_ps.cached_lens))
        ps = new_ps
        seen += len(batch)
        week_verdicts = phish_verdicts + legit_verdicts
        m = confusion_metrics(week_verdicts)
        iterations.append(Iteration(week, m.tpr, m.fpr, len(ps), seen, len(added),
                                    len(ps) / seen, week_verdicts))
        all_verdicts.extend(week_verdicts)
        log.info("week %s: tpr=%.4f fpr=%.4f prototypes=%d", week, m.tpr, m.fpr, len(ps))

    report = _report(all_verdicts, ps, len(first_docs), seen, iterations)
    return report


def prototype_growth(docs: Sequence[ByteDocument], t: Threshold = Threshold(),
                     c: CompressorKind = DEFAULT_COMPRESSOR, cache: LengthCache | None = CACHE,
                     workers: int = 1) -> list[tuple[str, int, float]]:
    """(week, prototype count, compression ratio) along the weekly phishing stream."""
    weeks = weekly_buckets(docs)
    if not weeks:
        raise ValueError("no phishing documents")
    ps, _ = extract_prototypes(weeks[0][1], t, c, cache, workers)
    seen = len(weeks[0][1])
    out = [(weeks[0][0], len(ps), len(ps) / seen)]
    for week, batch in weeks[1:]:
        ps, _ = incremental_update(batch, ps, cache, workers)
        seen += len(batch)
        out.append((week, len(ps), len(ps) / seen))
    return out


@dataclass
class BenchRow:
    compressor: str
    tpr: float
    tnr: float
    accuracy: float
    auc: float
    gmean: float
    prototypes: int
    per_iteration_prototypes: list[int]
    per_iteration_ratio: list[float]
    seconds: float


def bench_compressors(docs: Sequence[ByteDocument], cutoff: date, t: Threshold = Threshold(),
                      kinds: Sequence[CompressorKind] | None = None,
                      cache: LengthCache | None = CACHE, workers: int = 1) -> list[BenchRow]:
    """Temporal-split metrics plus incremental prototype growth for each compressor."""
    temporal_split(docs, cutoff)
    rows = []
    for c in kinds or CompressorKind.all():
        start = time.perf_counter()
        report, ps = evaluate_split(docs, cutoff, t, c, cache, workers)
        growth = prototype_growth(docs, t, c, cache, workers)
        m = report.metrics
        rows.append(BenchRow(c.label, m.tpr, m.tnr, m.accuracy, report.roc.auc, m.gmean, len(ps),
                             [k for _, k, _ in growth], [r for _, _, r in growth],
                             time.perf_counter() - start))
    return rows


def bench_to_csv(rows: Sequence[BenchRow], path: str | Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["compressor", "tpr", "tnr", "accuracy", "auc", "gmean", "prototypes"])
        for r in rows:
            w.writerow([r.compressor, repr(r.tpr), repr(r.tnr), repr(r.accuracy),
                        repr(r.auc), repr(r.gmean), r.prototypes])


@dataclass(frozen=True)
class Latency:
    samples: tuple[float, ...]
    mean: float
    median: float
    p95: float


def measure_latency(ps: PrototypeSet, docs: Sequence[ByteDocument], repeats: int = 1) -> Latency:
    """Wall-clock seconds per classification, document compression included."""
    samples = []
    for _ in range(repeats):
        for d in docs:
            start = time.perf_counter()
            classify(d, ps, cache=None)
            samples.append(time.perf_counter() - start)
    if not samples:
        raise ValueError("no documents to time")
    return Latency(tuple(samples), statistics.fmean(samples), statistics.median(samples),
                   float(np.percentile(samples, 95)))
