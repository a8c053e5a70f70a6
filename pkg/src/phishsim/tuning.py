"""Quality-of-Clustering score and distance-threshold selection.

QC is the mean per-cluster compactness divided by the minimum distance
between any two prototypes; smaller is better. The threshold is chosen at
the minimum of a degree-8 polynomial fitted to QC over a threshold grid.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import Polynomial

from .ncd import CACHE, DEFAULT_COMPRESSOR, ByteDocument, CompressorKind, LengthCache, ncd
from .prototypes import Assignment, PrototypeSet, Threshold, extract_prototypes

log = logging.getLogger(__name__)

FIT_DEGREE = 8
SAMPLE_STEP = 1e-4


class MicdUndefined(ValueError):
    pass


def default_grid() -> list[float]:
    return [round(0.05 + 0.01 * i, 2) for i in range(56)]


def compactness(members: Sequence[ByteDocument], proto: ByteDocument,
                c: CompressorKind = DEFAULT_COMPRESSOR, cache: LengthCache | None = CACHE) -> float:
    """Mean NCD from members to their prototype; 0 for a singleton cluster."""
    if not members:
        return 0.0
    return sum(ncd(m, proto, c, cache).value for m in members) / len(members)


def micd(ps: PrototypeSet, cache: LengthCache | None = CACHE) -> float:
    if len(ps) < 2:
        raise MicdUndefined(f"MICD needs at least 2 prototypes, got {len(ps)}")
    return min(ncd(a, b, ps.compressor, cache).value
               for a, b in itertools.combinations(ps.prototypes, 2))


def qc_from_parts(compactnesses: Sequence[float], min_inter: float) -> float:
    if min_inter <= 0:
        raise MicdUndefined("minimum inter-prototype distance is zero")
    return float(np.mean(compactnesses)) / min_inter


@dataclass(frozen=True)
class ClusterStats:
    compactness: dict[str, float]
    micd: float
    qc: float
    threshold_used: Threshold
    k: int


def qc(assignment: Assignment, ps: PrototypeSet) -> ClusterStats:
    """Unweighted mean of cluster compactness over MICD.

    Distances are read from the assignment, which already holds
    NCD(member, prototype) for every member.
    """
    m = micd(ps)
    per: dict[str, list[float]] = {pid: [] for pid in ps.ids}
    for member in assignment.values():
        per[member.prototype_id].append(member.distance.value)
    comp = {pid: (sum(v) / len(v) if v else 0.0) for pid, v in per.items()}
    return ClusterStats(comp, m, qc_from_parts(list(comp.values()), m), ps.threshold, len(ps))


@dataclass
class ThresholdSweep:
    grid: list[tuple[float, float, int]]
    fitted_coeffs: list[float]  # ascending powers of the threshold
    selected: Threshold

    def to_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "qc", "k"])
            for t, q, k in self.grid:
                w.writerow([repr(t), repr(q), k])

    def sidecar(self) -> dict:
        return {"degree": FIT_DEGREE, "coefficients": self.fitted_coeffs,
                "selected": self.selected.d,
                "range": [self.grid[0][0], self.grid[-1][0]]}

    def write(self, csv_path: str | Path, json_path: str | Path):
        self.to_csv(csv_path)
        Path(json_path).write_text(json.dumps(self.sidecar(), indent=2) + "\n")


def fit_minimum(thresholds: Sequence[float], values: Sequence[float]
                ) -> tuple[Polynomial, float]:
    """Least-squares degree-8 fit; return it and its minimum over the data range.

    The minimum is located by sampling at 1e-4. A flat fit returns the
    midpoint of the range.
    """
    x = np.asarray(thresholds, dtype=float)
    y = np.asarray(values, dtype=float)
    if len(x) < FIT_DEGREE + 1:
        raise ValueError(f"need at least {FIT_DEGREE + 1} points for a degree-{FIT_DEGREE} fit")
    poly = Polynomial.fit(x, y, FIT_DEGREE)
    lo, hi = float(x.min()), float(x.max())
    xs = np.linspace(lo, hi, int(round((hi - lo) / SAMPLE_STEP)) + 1)
    ys = poly(xs)
    scale = max(float(np.max(np.abs(y))), 1e-300)
    if float(np.ptp(ys)) <= 1e-9 * scale:
        return poly, (lo + hi) / 2
    return poly, float(xs[int(np.argmin(ys))])


def select_threshold(data: Sequence[ByteDocument], grid: Sequence[float] | None = None,
                     c: CompressorKind = DEFAULT_COMPRESSOR, cache: LengthCache | None = CACHE,
                     workers: int = 1,
                     qc_at: Callable[[float], tuple[float, int]] | None = None) -> ThresholdSweep:
    """Sweep the grid, fit QC against threshold and pick the fitted minimum.

    ``qc_at`` replaces extraction with a callable returning (qc, k) for a
    threshold; ``data`` is then ignored. Useful for checking the fit alone.
    """
    grid = sorted(default_grid() if grid is None else grid)
    if len(grid) < FIT_DEGREE + 1:
        raise ValueError(f"grid needs at least {FIT_DEGREE + 1} thresholds")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid thresholds must be distinct")
    rows = []
    for t in grid:
        if qc_at is not None:
            q, k = qc_at(t)
        else:
            ps, assignment = extract_prototypes(data, Threshold(t), c, cache, workers)
            k = len(ps)
        if k < 2:
            log.warning("threshold %.4f yields %d prototype(s); dropped", t, k)
            continue
        if qc_at is None:
            try:
                q = qc(assignment, ps).qc
            except MicdUndefined as exc:
                log.warning("threshold %.4f dropped: %s", t, exc)
                continue
        rows.append((float(t), float(q), int(k)))
    if not rows:
        raise ValueError("every grid threshold is degenerate (fewer than 2 prototypes)")
    poly, best = fit_minimum([r[0] for r in rows], [r[1] for r in rows])
    coeffs = [float(v) for v in poly.convert().coef]
    coeffs += [0.0] * (FIT_DEGREE + 1 - len(coeffs))
    return ThresholdSweep(rows, coeffs, Threshold(best))
