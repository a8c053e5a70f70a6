"""Reduce rendered HTML to its tag skeleton and ingest labeled corpora.

Text, comments, CDATA and the bodies of script/style are dropped; elements
and their attributes survive in document order. Input is parsed with a
full HTML5 tree builder so malformed pages recover the way a browser would.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from html import escape
from pathlib import Path
from xml.etree.ElementTree import Element

import html5lib
from html5lib.constants import prefixes as NS_PREFIXES
from html5lib.constants import voidElements

from .ncd import ByteDocument, Label

log = logging.getLogger(__name__)

# Elements that, when first in <body>, would migrate into <head> on reparse
# unless the <body> start tag is written out.
_HEAD_ATTRACTORS = frozenset({
    "base", "basefont", "bgsound", "link", "meta", "noframes", "noscript",
    "script", "style", "template", "title",
})
_WRAPPERS = ("html", "head", "body")


class SanitizeError(ValueError):
    pass


@dataclass(frozen=True)
class SanitizedDocument(ByteDocument):
    original_len: int = 0

    @property
    def sanitized_len(self) -> int:
        return len(self.data)


def _local(name: str) -> str:
    return name.rsplit("}", 1)[-1] if name.startswith("{") else name


def _attr_name(name: str) -> str | None:
    if name.startswith("{"):
        ns, local = name[1:].split("}", 1)
        prefix = NS_PREFIXES.get(ns)
        name = f"{prefix}:{local}" if prefix and local != prefix else local
    if not name or any(ch in name for ch in " \t\n\f\r/>=\"'<"):
        return None
    return name


def _start_tag(el: Element, strip_attributes: bool) -> str:
    name = _local(el.tag)
    if strip_attributes or not el.attrib:
        return f"<{name}>"
    parts = [name]
    for key, value in el.attrib.items():
        attr = _attr_name(key)
        if attr is not None:
            parts.append(f'{attr}="{escape(value, quote=True)}"')
    return "<" + " ".join(parts) + ">"


def _elements(el: Element) -> list[Element]:
    # Comments and processing instructions have callable tags in etree.
    return [child for child in el if isinstance(child.tag, str)]


def _emit(el: Element, out: list[str], strip_attributes: bool):
    out.append(_start_tag(el, strip_attributes))
    name = _local(el.tag)
    if name in voidElements and not el.tag.startswith("{"):
        return
    for child in _elements(el):
        _emit(child, out, strip_attributes)
    out.append(f"</{name}>")


def _emit_document(root: Element, strip_attributes: bool) -> str:
    out: list[str] = []
    if root.attrib and not strip_attributes:
        out.append(_start_tag(root, strip_attributes))
    for part in _elements(root):
        name = _local(part.tag)
        children = _elements(part)
        if name == "head":
            if part.attrib and not strip_attributes:
                out.append(_start_tag(part, strip_attributes))
        elif name == "body":
            keep = (part.attrib and not strip_attributes) or (
                children and _local(children[0].tag) in _HEAD_ATTRACTORS)
            if keep:
                out.append(_start_tag(part, strip_attributes))
        else:
            # frameset documents, or stray elements the tree builder left under <html>
            _emit(part, out, strip_attributes)
            continue
        for child in children:
            _emit(child, out, strip_attributes)
    return "".join(out)


def skeleton(html: str | bytes, strip_attributes: bool = False) -> bytes:
    """Return the tag skeleton of ``html`` as UTF-8 bytes."""
    if isinstance(html, bytes):
        html = html.decode("utf-8", errors="replace")
    root = html5lib.parse(html, treebuilder="etree", namespaceHTMLElements=False)
    text = _emit_document(root, strip_attributes)
    if not text:
        raise SanitizeError("document has no elements")
    return text.encode("utf-8")


def sanitize_html(raw: ByteDocument, strip_attributes: bool = False) -> SanitizedDocument:
    try:
        data = skeleton(raw.data, strip_attributes)
    except SanitizeError as exc:
        raise SanitizeError(f"{raw.id}: {exc}") from None
    return SanitizedDocument(
        id=raw.id, data=data, source_path=raw.source_path, label=raw.label,
        timestamp=raw.timestamp, original_len=len(raw.data))


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    path: str
    label: Label
    timestamp: date
    brand: str | None = None


@dataclass
class CorpusManifest:
    path: Path
    records: list[ManifestRecord]
    dropped: dict[str, str] = field(default_factory=dict)

    @property
    def drop_count(self) -> int:
        return len(self.dropped)

    def labels(self) -> dict[str, Label]:
        return {r.id: r.label for r in self.records}


def parse_timestamp(value: str) -> date:
    """ISO-8601 date or datetime, normalized to a UTC calendar date."""
    try:
        return date.fromisoformat(value)
    except ValueError:
        pass
    dt = datetime.fromisoformat(value.replace("Z", "+00:00"))
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc)
    return dt.date()


def read_manifest(manifest_path: str | Path) -> CorpusManifest:
    manifest_path = Path(manifest_path)
    records = []
    seen = set()
    with open(manifest_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                rec = ManifestRecord(
                    id=str(row["id"]), path=str(row["path"]), label=Label(row["label"]),
                    timestamp=parse_timestamp(row["timestamp"]), brand=row.get("brand"))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{manifest_path}:{lineno}: bad manifest record: {exc}") from exc
            if rec.id in seen:
                raise ValueError(f"{manifest_path}:{lineno}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            records.append(rec)
    return CorpusManifest(manifest_path, records)


def ingest_corpus(manifest_path: str | Path, strip_attributes: bool = False
                  ) -> tuple[CorpusManifest, list[SanitizedDocument]]:
    """Read, sanitize and label every manifest entry.

    Missing, empty and element-free pages are dropped with a warning and
    recorded in ``manifest.dropped``; the surviving records are kept in
    ``manifest.records``.
    """
    manifest = read_manifest(manifest_path)
    base = manifest.path.parent
    docs = []
    kept = []
    for rec in manifest.records:
        path = base / rec.path
        try:
            raw = path.read_bytes()
        except OSError as exc:
            log.warning("skipping %s: %s", rec.id, exc)
            manifest.dropped[rec.id] = f"unreadable: {exc.strerror or exc}"
            continue
        if not raw.strip():
            log.warning("skipping %s: empty page", rec.id)
            manifest.dropped[rec.id] = "empty"
            continue
        doc = ByteDocument(rec.id, raw, str(path), rec.label, rec.timestamp)
        try:
            docs.append(sanitize_html(doc, strip_attributes))
        except SanitizeError as exc:
            log.warning("skipping %s: %s", rec.id, exc)
            manifest.dropped[rec.id] = "no elements"
            continue
        kept.append(rec)
    if not docs:
        raise ValueError(f"no usable documents in {manifest.path}")
    manifest.records = kept
    return manifest, docs
