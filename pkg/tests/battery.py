"""Seeded small clustering instances shared by unit and acceptance tests."""

import random
from functools import lru_cache

from phishsim.ncd import ByteDocument, DEFAULT_COMPRESSOR, LengthCache, ncd
from phishsim.prototypes import Threshold
from phishsim.sanitizer import sanitize_html
from phishsim.synthetic import mutate, random_page, to_html

THRESHOLDS = (0.15, 0.2, 0.251, 0.3, 0.4, 0.6)


@lru_cache(maxsize=None)
def instance(seed: int):
    """Return (docs, threshold, dist) with n <= 12 drawn from 1-4 templates."""
    rng = random.Random(seed)
    n = rng.randint(3, 12)
    templates = [random_page(rng, f"b{seed}t{i}", blocks=(2, 4), depth=1)
                 for i in range(rng.randint(1, 4))]
    docs = []
    for i in range(n):
        page = mutate(rng.choice(templates), rng, f"b{seed}", inserts=(0, 4), numeric=0.8)
        raw = ByteDocument(f"d{i:02d}", to_html(page, rng).encode())
        docs.append(sanitize_html(raw))
    cache = LengthCache()
    table = {}
    for a in docs:
        for b in docs:
            if a.id < b.id:
                table[a.id, b.id] = table[b.id, a.id] = ncd(a, b, DEFAULT_COMPRESSOR, cache).value

    def dist(x, y):
        return 0.0 if x == y else table[x, y]

    return docs, Threshold(rng.choice(THRESHOLDS)), dist
