"""Agglomerative clustering of NCD matrices and dendrogram export.

Ties between equally close cluster pairs are broken by the smallest leaf
label in each cluster, so the tree does not depend on input order.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

LINKAGES = ("single", "average", "complete")


@dataclass(frozen=True)
class DendrogramNode:
    height: float = 0.0
    label: str | None = None
    index: int | None = None  # matrix row for leaves
    left: "DendrogramNode | None" = None
    right: "DendrogramNode | None" = None
    size: int = 1

    @classmethod
    def leaf(cls, label: str, index: int | None = None) -> "DendrogramNode":
        return cls(0.0, label, index)

    @classmethod
    def join(cls, a: "DendrogramNode", b: "DendrogramNode", height: float) -> "DendrogramNode":
        if b.min_label < a.min_label:
            a, b = b, a
        return cls(height, None, None, a, b, a.size + b.size)

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def min_label(self) -> str:
        return self.label if self.is_leaf else self.left.min_label

    def leaves(self) -> list[str]:
        if self.is_leaf:
            return [self.label]
        return self.left.leaves() + self.right.leaves()

    def internal_nodes(self) -> list["DendrogramNode"]:
        """Post-order list of merge nodes."""
        if self.is_leaf:
            return []
        return self.left.internal_nodes() + self.right.internal_nodes() + [self]

    def canonical(self, digits: int = 9) -> str:
        """Order-independent rendering of topology and merge heights."""
        if self.is_leaf:
            return self.label
        parts = sorted([self.left.canonical(digits), self.right.canonical(digits)])
        return f"({parts[0]},{parts[1]}):{round(self.height, digits)}"


def agglomerate(matrix, labels: Sequence[str] | None = None,
                linkage: str = "average") -> DendrogramNode:
    d = np.asarray(matrix, dtype=float)
    n = d.shape[0]
    if d.ndim != 2 or d.shape != (n, n):
        raise ValueError("distance matrix must be square")
    if n < 2:
        raise ValueError("need at least 2 items to cluster")
    if not np.array_equal(d, d.T):
        raise ValueError("distance matrix is not symmetric")
    if linkage not in LINKAGES:
        raise ValueError(f"linkage must be one of {LINKAGES}")
    labels = [str(i) for i in range(n)] if labels is None else [str(x) for x in labels]
    if len(labels) != n or len(set(labels)) != n:
        raise ValueError("labels must be unique and match the matrix size")

    clusters = {i: DendrogramNode.leaf(labels[i], i) for i in range(n)}
    dist = {(i, j): float(d[i, j]) for i in range(n) for j in range(i + 1, n)}

    def pair(a, b):
        return (a, b) if a < b else (b, a)

    next_id = n
    while len(clusters) > 1:
        (a, b), h = min(
            dist.items(),
            key=lambda kv: (kv[1], *sorted((clusters[kv[0][0]].min_label,
                                            clusters[kv[0][1]].min_label))))
        ca, cb = clusters.pop(a), clusters.pop(b)
        merged = DendrogramNode.join(ca, cb, h)
        del dist[(a, b)]
        for k in clusters:
            da, db = dist.pop(pair(a, k)), dist.pop(pair(b, k))
            if linkage == "single":
                dk = min(da, db)
            elif linkage == "complete":
                dk = max(da, db)
            else:
                dk = (ca.size * da + cb.size * db) / (ca.size + cb.size)
            dist[(k, next_id)] = dk
        clusters[next_id] = merged
        next_id += 1
    return next(iter(clusters.values()))


_NEWICK_SPECIAL = re.compile(r"[\s(),:;'\[\]]")


def _newick_label(label: str) -> str:
    if _NEWICK_SPECIAL.search(label):
        return "'" + label.replace("'", "''") + "'"
    return label


def _fmt(x: float) -> str:
    return format(x, ".12g")


def to_newick(tree: DendrogramNode) -> str:
    def walk(node: DendrogramNode, parent_height: float) -> str:
        length = _fmt(parent_height - node.height)
        if node.is_leaf:
            return f"{_newick_label(node.label)}:{length}"
        return f"({walk(node.left, node.height)},{walk(node.right, node.height)}):{length}"

    if tree.is_leaf:
        return f"{_newick_label(tree.label)};"
    return f"({walk(tree.left, tree.height)},{walk(tree.right, tree.height)});"


def parse_newick(text: str) -> DendrogramNode:
    """Read a binary ultrametric tree written by :func:`to_newick`."""
    tokens = re.findall(r"'(?:[^']|'')*'|[(),:;]|[^(),:;\s]+", text.strip())
    pos = 0

    def peek():
        return tokens[pos] if pos < len(tokens) else None

    def take(expected=None):
        nonlocal pos
        tok = tokens[pos]
        if expected is not None and tok != expected:
            raise ValueError(f"expected {expected!r}, got {tok!r}")
        pos += 1
        return tok

    def node():
        # returns (subtree, branch length above it)
        if peek() == "(":
            take("(")
            left, ll = node()
            take(",")
            right, rl = node()
            take(")")
            height = max(left.height + ll, right.height + rl)
            sub = DendrogramNode.join(left, right, height)
        else:
            tok = take()
            label = tok[1:-1].replace("''", "'") if tok.startswith("'") else tok
            sub = DendrogramNode.leaf(label)
        length = 0.0
        if peek() == ":":
            take(":")
            length = float(take())
        return sub, length

    tree, _ = node()
    take(";")
    return tree


def to_linkage_rows(tree: DendrogramNode) -> list[tuple[int, int, float, int]]:
    """Merge rows numbered like scipy: leaves 0..n-1 by matrix row, merges n, n+1, ..."""
    n = tree.size
    ids: dict[int, int] = {}
    rows = []

    def ref(node):
        return node.index if node.is_leaf else ids[id(node)]

    # children never sit above parents, so (height, post-order) is a valid merge order
    merges = sorted(enumerate(tree.internal_nodes()), key=lambda p: (p[1].height, p[0]))
    for _, node in merges:
        rows.append((node, ref(node.left), ref(node.right), node.height, node.size))
        ids[id(node)] = n + len(rows) - 1
    return [r[1:] for r in rows]


def export(tree: DendrogramNode, format: str = "newick") -> bytes:
    if format == "newick":
        return (to_newick(tree) + "\n").encode()
    if format == "csv-linkage":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["left", "right", "height", "size"])
        for left, right, h, size in to_linkage_rows(tree):
            w.writerow([left, right, repr(h), size])
        return buf.getvalue().encode()
    raise ValueError(f"unknown export format {format!r}")


def matrix_to_csv(matrix, labels: Sequence[str]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", *labels])
    for label, row in zip(labels, np.asarray(matrix)):
        w.writerow([label, *(repr(float(v)) for v in row)])
    return buf.getvalue().encode()
