import random

import pytest

import oracles
from battery import instance
from phishsim.ncd import ByteDocument, DEFAULT_COMPRESSOR, Label, LengthCache, counting, ncd
from phishsim.prototypes import (Decision, PrototypeSet, Threshold, classify, classify_many,
                                 extract_prototypes, incremental_update, union)
from phishsim.sanitizer import sanitize_html
from phishsim.synthetic import mutate, random_page, random_bytes, to_html


def family(seed, n, prefix="t", label=Label.PHISHING):
    rng = random.Random(seed)
    template = random_page(rng, prefix, blocks=(2, 4), depth=1)
    return [sanitize_html(ByteDocument(f"{prefix}{i:02d}", to_html(mutate(template, rng, prefix),
                                                                   rng).encode(), label=label))
            for i in range(n)]


def test_threshold_bounds():
    assert Threshold().d == 0.251
    for bad in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            Threshold(bad)


def test_single_document():
    d = ByteDocument("only", b"<div></div>" * 10)
    ps, assignment = extract_prototypes([d])
    assert ps.ids == ["only"] and assignment == {}
    assert ps.cached_lens.keys() == {"only"}


def test_identical_documents_collapse():
    page = family(3, 1, "dup")[0].data
    docs = [ByteDocument(f"d{i}", page) for i in range(5)]
    ps, assignment = extract_prototypes(docs)
    assert ps.ids == ["d0"]
    assert len(assignment) == 4
    assert all(m.prototype_id == "d0" and m.distance.value <= 0.1 for m in assignment.values())


def test_empty_and_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        extract_prototypes([])
    d = ByteDocument("a", b"<p></p>")
    with pytest.raises(ValueError):
        extract_prototypes([d, ByteDocument("a", b"<b></b>")])


def test_three_templates_match_oracle_and_bound():
    docs = family(1, 4, "a") + family(2, 4, "b") + family(3, 4, "c")
    ids = [d.id for d in docs]
    cache = LengthCache()
    table = {(x.id, y.id): ncd(x, y, DEFAULT_COMPRESSOR, cache).value for x in docs for y in docs}

    def dist(x, y):
        return 0.0 if x == y else table[x, y]

    ps, assignment = extract_prototypes(docs, Threshold(0.251), cache=cache)
    expected, members = oracles.fpf(ids, dist, 0.251)
    assert ps.ids == expected
    assert {k: (m.prototype_id, m.distance.value) for k, m in assignment.items()} == members
    assert len(ps) == 3
    opt = oracles.optimal_k_center(ids, len(ps), dist)
    for seed in ids:
        seeded, _ = oracles.fpf(ids, dist, 0.251, seed=seed)
        if len(seeded) == len(ps):
            assert oracles.covering_radius(ids, set(seeded), dist) <= 2 * opt


@pytest.mark.parametrize("seed", range(10))
def test_battery_coverage_and_budget(seed):
    docs, t, dist = instance(seed)
    with counting() as stats:
        ps, assignment = extract_prototypes(docs, t, cache=LengthCache())
    n, k = len(docs), len(ps)
    assert stats.ncd_evaluations <= n * k
    assert set(assignment) | set(ps.ids) == {d.id for d in docs}
    assert all(m.distance.value <= t.d for m in assignment.values())


def test_prototypes_are_samples():
    docs = family(4, 6, "s")
    ps, _ = extract_prototypes(docs)
    by_id = {d.id: d for d in docs}
    assert all(p is by_id[p.id] for p in ps)


def test_deterministic_under_input_order():
    docs = family(5, 8, "a") + family(6, 8, "b")
    shuffled = docs[:]
    random.Random(0).shuffle(shuffled)
    a, _ = extract_prototypes(docs)
    b, _ = extract_prototypes(shuffled)
    assert a.ids == b.ids


def test_parallel_relaxation_matches_serial():
    docs = family(7, 10, "a") + family(8, 10, "b")
    a, ma = extract_prototypes(docs, workers=1)
    b, mb = extract_prototypes(docs, workers=4)
    assert a.ids == b.ids and ma == mb


def test_members_classify_as_phishing():
    docs = family(9, 10, "a") + family(10, 10, "b")
    ps, assignment = extract_prototypes(docs)
    by_id = {d.id: d for d in docs}
    for member, m in assignment.items():
        if m.distance.value < ps.threshold.d:
            assert classify(by_id[member], ps).is_phishing


def test_classify_identical_doc():
    docs = family(11, 5)
    ps, _ = extract_prototypes(docs)
    v = classify(ps.prototypes[0], ps)
    assert v.decision is Decision.PHISHING
    assert v.nearest_prototype == ps.ids[0]
    assert v.min_distance.value <= 0.1


def test_classify_random_bytes_far():
    ps, _ = extract_prototypes(family(12, 6, "a") + family(13, 6, "b"))
    v = classify(ByteDocument("rnd", random_bytes(3, 4096)), ps)
    assert v.decision is Decision.NON_PHISHING
    assert v.min_distance.value >= 0.9


def test_classify_exactly_at_threshold_is_negative():
    docs = family(14, 2)
    d = ncd(docs[0], docs[1]).value
    ps = PrototypeSet.build([docs[0]], threshold=Threshold(d))
    v = classify(docs[1], ps)
    assert v.min_distance.value == d
    assert v.decision is Decision.NON_PHISHING
    assert v.score == -d


def test_classify_concat_budget_and_cached_lengths():
    ps, _ = extract_prototypes(family(15, 6, "a") + family(16, 6, "b"))
    probe = family(17, 1, "z")[0]
    cache = LengthCache()
    with counting() as stats:
        classify(probe, ps, cache)
    assert stats.concat == len(ps)
    assert stats.single == 1  # only the probe itself


def test_classify_tie_goes_to_smallest_id():
    a = ByteDocument("b-proto", b"<div><p></p></div>" * 20)
    b = ByteDocument("a-proto", b"<div><p></p></div>" * 20)
    ps = PrototypeSet.build([a, b])
    v = classify(ByteDocument("q", b"<div><p></p></div>" * 20), ps)
    assert v.nearest_prototype == "a-proto"


def test_classify_empty_set_rejected():
    with pytest.raises(ValueError):
        classify(ByteDocument("q", b"<p></p>"), PrototypeSet(()))


def test_classify_many_parallel():
    docs = family(18, 6, "a")
    ps, _ = extract_prototypes(docs[:3])
    assert classify_many(docs, ps, workers=1) == classify_many(docs, ps, workers=3)


def test_union_rejects_clash():
    docs = family(19, 3)
    ps = PrototypeSet.build(docs[:2])
    with pytest.raises(ValueError):
        union(ps, PrototypeSet.build(docs[1:]))
    assert union(ps, PrototypeSet.build([])) is ps


def test_update_all_detected_leaves_set_unchanged():
    docs = family(20, 8)
    ps, _ = extract_prototypes(docs)
    new, verdicts = incremental_update(docs, ps)
    assert new.ids == ps.ids and new.prototypes == ps.prototypes
    assert all(v.is_phishing for v in verdicts)


def test_update_five_identical_novel_pages():
    ps, _ = extract_prototypes(family(21, 5, "a"))
    page = family(22, 1, "n")[0].data
    batch = [ByteDocument(f"n{i}", page, label=Label.PHISHING) for i in range(5)]
    new, verdicts = incremental_update(batch, ps)
    assert len(new) == len(ps) + 1
    assert new.prototypes[:len(ps)] == ps.prototypes
    assert not any(v.is_phishing for v in verdicts)


def test_update_ignores_false_positives():
    ps, _ = extract_prototypes(family(23, 5, "a"))
    legit = [ByteDocument(d.id + "L", d.data, label=Label.LEGITIMATE) for d in family(24, 3, "x")]
    new, _ = incremental_update(legit, ps)
    assert new is ps


def test_update_never_mutates_input():
    ps, _ = extract_prototypes(family(25, 4, "a"))
    before = (ps.ids, dict(ps.cached_lens))
    new, _ = incremental_update(family(26, 4, "b"), ps)
    assert (ps.ids, dict(ps.cached_lens)) == before
    assert len(new) >= len(ps)


def test_three_week_stream_matches_replay():
    weeks = [family(30 + w, 5, f"w{w}a") + family(40 + w % 2, 3, f"w{w}b") for w in range(3)]
    cache = LengthCache()
    everything = [d for w in weeks for d in w]
    table = {}
    for x in everything:
        for y in everything:
            table[x.id, y.id] = ncd(x, y, DEFAULT_COMPRESSOR, cache).value
    labels = {d.id: d.label.value for d in everything}
    counts, _ = oracles.replay_incremental([[d.id for d in w] for w in weeks], labels,
                                           lambda a, b: table[a, b], 0.251)
    ps, _ = extract_prototypes(weeks[0], cache=cache)
    got = [len(ps)]
    for w in weeks[1:]:
        ps, _ = incremental_update(w, ps, cache)
        got.append(len(ps))
    assert got == counts
