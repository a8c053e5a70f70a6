"""Seeded synthetic corpora: phishing-kit variants and legitimate-like pages.

A kit is a random page template. Its variants differ the way kit output
does in the wild: attribute order shuffles, changed numeric CSS or cache
busting parameters, a few inserted elements, and different visible text.
Legitimate pages are drawn independently from a broader grammar.
"""

from __future__ import annotations

import copy
import json
import random
from dataclasses import dataclass, field
from datetime import date, timedelta
from html import escape
from pathlib import Path

from .ncd import ByteDocument, Label

WORDS = (
    "account verify secure login update billing password sign continue confirm "
    "member support help privacy terms service wallet card payment email phone "
    "notice alert review restore access identity session device limited unlock "
    "home news about contact products blog careers store search menu footer "
    "press investors events community docs pricing features team partners"
).split()

BLOCK_TAGS = ["div", "section", "header", "footer", "nav", "main", "article", "aside", "form",
              "ul", "table"]
INLINE_TAGS = ["span", "a", "b", "i", "strong", "em", "label", "small"]
VOID_TAGS = ["img", "input", "br", "hr"]


@dataclass
class Node:
    tag: str
    attrs: list[tuple[str, str]] = field(default_factory=list)
    children: list["Node"] = field(default_factory=list)
    text: str = ""


def _words(rng: random.Random, lo: int, hi: int) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))


def _ident(rng: random.Random, prefix: str) -> str:
    return f"{prefix}-{rng.choice(WORDS)}{rng.randint(0, 99)}"


def _attrs(rng: random.Random, tag: str, prefix: str) -> list[tuple[str, str]]:
    attrs = []
    if rng.random() < 0.7:
        attrs.append(("class", " ".join(_ident(rng, prefix) for _ in range(rng.randint(1, 3)))))
    if rng.random() < 0.25:
        attrs.append(("id", _ident(rng, prefix)))
    if rng.random() < 0.3:
        attrs.append(("style", f"width:{rng.randint(10, 900)}px;margin:{rng.randint(0, 40)}px"))
    if tag == "a":
        attrs.append(("href", f"/{rng.choice(WORDS)}/{rng.choice(WORDS)}.html"))
    elif tag == "img":
        attrs.append(("src", f"/static/{_ident(rng, prefix)}.png"))
        attrs.append(("alt", rng.choice(WORDS)))
    elif tag == "input":
        attrs.append(("type", rng.choice(["text", "password", "email", "hidden", "submit"])))
        attrs.append(("name", rng.choice(WORDS)))
    elif tag == "form":
        attrs.append(("method", "post"))
        attrs.append(("action", f"/{rng.choice(WORDS)}.php"))
    return attrs


def _block(rng: random.Random, depth: int, prefix: str) -> Node:
    tag = rng.choice(BLOCK_TAGS)
    node = Node(tag, _attrs(rng, tag, prefix))
    if tag == "ul":
        for _ in range(rng.randint(2, 5)):
            li = Node("li", _attrs(rng, "li", prefix), text=_words(rng, 1, 3))
            li.children.append(Node("a", _attrs(rng, "a", prefix), text=_words(rng, 1, 2)))
            node.children.append(li)
        return node
    if tag == "table":
        tbody = Node("tbody")
        cols = rng.randint(2, 4)
        for _ in range(rng.randint(1, 3)):
            tr = Node("tr", [("class", _ident(rng, prefix))])
            tr.children = [Node("td", _attrs(rng, "td", prefix), text=_words(rng, 1, 3))
                           for _ in range(cols)]
            tbody.children.append(tr)
        node.children.append(tbody)
        return node
    node.text = _words(rng, 0, 4)
    for _ in range(rng.randint(1, 4)):
        r = rng.random()
        if depth > 0 and r < 0.45:
            node.children.append(_block(rng, depth - 1, prefix))
        elif r < 0.8:
            t = rng.choice(INLINE_TAGS)
            node.children.append(Node(t, _attrs(rng, t, prefix), text=_words(rng, 1, 3)))
        else:
            t = rng.choice(VOID_TAGS)
            node.children.append(Node(t, _attrs(rng, t, prefix)))
    return node


def random_page(rng: random.Random, prefix: str, blocks: tuple[int, int] = (3, 6),
                depth: int = 2, title: str | None = None) -> Node:
    head = Node("head", children=[
        Node("meta", [("charset", "utf-8")]),
        Node("title", text=title or _words(rng, 2, 4)),
        Node("link", [("rel", "stylesheet"),
                      ("href", f"/css/{_ident(rng, prefix)}.css?v={rng.randint(100, 99999)}")]),
    ])
    if rng.random() < 0.6:
        head.children.append(Node("script", [("src", f"/js/{_ident(rng, prefix)}.js")]))
    body = Node("body", _attrs(rng, "body", prefix))
    body.children = [_block(rng, depth, prefix) for _ in range(rng.randint(*blocks))]
    if rng.random() < 0.5:
        body.children.append(Node("script", text="var t = %d;" % rng.randint(0, 10**6)))
    return Node("html", [("lang", "en")], [head, body])


def render(node: Node, comments: bool = True) -> str:
    parts = [f"<{node.tag}"]
    for k, v in node.attrs:
        parts.append(f' {k}="{escape(v, quote=True)}"')
    parts.append(">")
    if node.tag in VOID_TAGS or node.tag in ("meta", "link"):
        return "".join(parts)
    if node.text:
        parts.append(node.text if node.tag == "script" else escape(node.text, quote=False))
    for child in node.children:
        parts.append(render(child, comments))
    parts.append(f"</{node.tag}>")
    return "".join(parts)


def to_html(page: Node, rng: random.Random | None = None) -> str:
    comment = f"<!-- build {rng.randint(0, 10**6)} -->" if rng else ""
    return "<!DOCTYPE html>\n" + comment + render(page)


def _walk(node: Node):
    yield node
    for c in node.children:
        yield from _walk(c)


_NUMBER_ATTRS = ("style", "href", "src")


def mutate(template: Node, rng: random.Random, prefix: str, inserts: tuple[int, int] = (0, 2),
           numeric: float = 0.5, shuffles: float = 0.3) -> Node:
    """One kit variant of ``template``."""
    page = copy.deepcopy(template)
    nodes = list(_walk(page))
    for n in nodes:
        if len(n.attrs) > 1 and rng.random() < shuffles:
            rng.shuffle(n.attrs)
        for i, (k, v) in enumerate(n.attrs):
            if k in _NUMBER_ATTRS and any(ch.isdigit() for ch in v) and rng.random() < numeric:
                n.attrs[i] = (k, _renumber(v, rng))
        if n.text and n.tag != "script":
            n.text = _words(rng, 1, 4)
    containers = [n for n in nodes if n.tag in ("div", "section", "form", "main", "article", "body")]
    for _ in range(rng.randint(*inserts)):
        host = rng.choice(containers)
        t = rng.choice(INLINE_TAGS + VOID_TAGS + ["div"])
        host.children.insert(rng.randint(0, len(host.children)),
                             Node(t, _attrs(rng, t, prefix), text=_words(rng, 0, 2)))
    return page


def _renumber(value: str, rng: random.Random) -> str:
    out, digits = [], []
    for ch in value + "\0":
        if ch.isdigit():
            digits.append(ch)
            continue
        if digits:
            out.append(str(rng.randint(0, 10 ** len(digits) - 1)))
            digits = []
        out.append(ch)
    return "".join(out[:-1])


@dataclass
class Corpus:
    docs: list[ByteDocument]
    templates: dict[str, str]  # phishing doc id -> template name
    start: date
    weeks: int

    def phishing(self) -> list[ByteDocument]:
        return [d for d in self.docs if d.label is Label.PHISHING]

    def legitimate(self) -> list[ByteDocument]:
        return [d for d in self.docs if d.label is Label.LEGITIMATE]

    def week_start(self, week: int) -> date:
        return self.start + timedelta(weeks=week)

    def write(self, root: str | Path, manifest_name: str = "manifest.jsonl") -> Path:
        root = Path(root)
        (root / "pages").mkdir(parents=True, exist_ok=True)
        manifest = root / manifest_name
        with open(manifest, "w", encoding="utf-8") as fh:
            for d in self.docs:
                rel = f"pages/{d.id}.html"
                (root / rel).write_bytes(d.data)
                row = {"id": d.id, "path": rel, "label": d.label.value,
                       "timestamp": d.timestamp.isoformat()}
                if d.id in self.templates:
                    row["brand"] = self.templates[d.id]
                fh.write(json.dumps(row) + "\n")
        return manifest


def kit_corpus(seed: int, n_templates: int = 20, n_variants: int = 30, n_legit: int = 2000,
               weeks: int = 10, start: date = date(2020, 4, 27), novel_weeks: bool = False
               ) -> Corpus:
    """Phishing variants spread over ``weeks`` ISO weeks plus a legitimate pool.

    Every template appears in every week unless ``novel_weeks`` is set, in
    which case templates are introduced one week at a time.
    """
    rng = random.Random(seed)
    docs: list[ByteDocument] = []
    templates: dict[str, str] = {}
    for t in range(n_templates):
        prefix = f"k{t}"
        template = random_page(rng, prefix, blocks=(2, 4), depth=1)
        first = (t * weeks) // n_templates if novel_weeks else 0
        for v in range(n_variants):
            page = mutate(template, rng, prefix)
            week = rng.randint(first, weeks - 1)
            day = start + timedelta(weeks=week, days=rng.randint(0, 6))
            doc_id = f"p{t:02d}-{v:03d}"
            docs.append(ByteDocument(doc_id, to_html(page, rng).encode(), "", Label.PHISHING, day))
            templates[doc_id] = prefix
    for i in range(n_legit):
        page = random_page(rng, f"s{i}", blocks=(4, 8), depth=2)
        day = start + timedelta(days=rng.randint(0, weeks * 7 - 1))
        docs.append(ByteDocument(f"l{i:05d}", to_html(page, rng).encode(), "", Label.LEGITIMATE, day))
    return Corpus(docs, templates, start, weeks)


def html_fixtures(seed: int, n: int = 50) -> list[str]:
    """Real-world-shaped pages: head metadata, scripts, styles, forms, tables, comments."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        page = random_page(rng, f"f{i}", blocks=(2, 6), depth=rng.randint(1, 3))
        head = page.children[0]
        head.children.append(Node("style", text="body{margin:%dpx}" % rng.randint(0, 20)))
        out.append(to_html(page, rng))
    return out


def random_bytes(seed: int, size: int) -> bytes:
    return random.Random(seed).randbytes(size)
