import json
import threading

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from faults import Fault, fault_after
from phishsim import store
from phishsim.ncd import ByteDocument, CompressorKind, Label, LengthCache, compressed_len
from phishsim.prototypes import PrototypeSet, Threshold
from phishsim.store import CorruptDb, append, blob_name, load, open_db, save, stats, verify


def protos(n, start=0, prefix="p"):
    return [ByteDocument(f"{prefix}{i}", f"<div class='c{i}'><p></p></div>".encode() * (i + 2),
                         label=Label.PHISHING) for i in range(start, start + n)]


def content(ps):
    return [(p.id, p.data) for p in ps.prototypes], ps.threshold, ps.compressor


def test_save_layout(tmp_path):
    ps = PrototypeSet.build(protos(3), threshold=Threshold(0.3))
    save(ps, tmp_path / "db")
    root = tmp_path / "db"
    assert sorted(p.name for p in root.iterdir()) == ["LOCK", "blobs", "lengths.lzma-6.json",
                                                      "manifest.json"]
    assert len(list((root / "blobs").iterdir())) == 3
    m = json.loads((root / "manifest.json").read_text())
    assert m["schema_version"] == 1 and m["threshold"] == 0.3
    assert m["compressor"] == {"name": "lzma", "level": 6}
    assert {"id", "sha256", "size", "blob"} <= m["prototypes"][0].keys()


def test_round_trip(tmp_path):
    ps = PrototypeSet.build(protos(4))
    save(ps, tmp_path / "db")
    back = load(tmp_path / "db")
    assert content(back) == content(ps)
    assert dict(back.cached_lens) == dict(ps.cached_lens)
    assert back.created_at == ps.created_at


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.tuples(st.text(min_size=1, max_size=12), st.binary(min_size=1, max_size=200)),
                min_size=1, max_size=6, unique_by=lambda t: t[0]))
def test_round_trip_property(tmp_path, items):
    docs = [ByteDocument(i, b) for i, b in items]
    if len({blob_name(d.id) for d in docs}) < len(docs):
        return
    ps = PrototypeSet.build(docs, cache=None)
    save(ps, tmp_path / "prop")
    assert content(load(tmp_path / "prop", cache=None)) == content(ps)


def test_blob_names_are_safe():
    for bad in ("../x", "a/b", ".", "..", "x y"):
        name = blob_name(bad)
        assert "/" not in name and name not in (".", "..")


def test_tampered_blob(tmp_path):
    save(PrototypeSet.build(protos(3)), tmp_path / "db")
    blob = tmp_path / "db" / "blobs" / "p1"
    blob.write_bytes(blob.read_bytes() + b" ")
    with pytest.raises(CorruptDb, match="p1"):
        load(tmp_path / "db")


def test_missing_blob(tmp_path):
    save(PrototypeSet.build(protos(2)), tmp_path / "db")
    (tmp_path / "db" / "blobs" / "p0").unlink()
    with pytest.raises(CorruptDb, match="missing blob"):
        load(tmp_path / "db")


def test_empty_dir(tmp_path):
    with pytest.raises(CorruptDb):
        load(tmp_path)


def test_sidecar_for_other_compressor(tmp_path):
    ps = PrototypeSet.build(protos(3))
    save(ps, tmp_path / "db")
    z = CompressorKind.of("zlib")
    back = load(tmp_path / "db", compressor=z, cache=None)
    assert back.compressor == z
    assert back.cached_lens == {p.id: compressed_len(p, z, None) for p in ps.prototypes}


def test_bad_sidecar_values_recomputed(tmp_path):
    ps = PrototypeSet.build(protos(2))
    save(ps, tmp_path / "db")
    side = tmp_path / "db" / "lengths.lzma-6.json"
    side.write_text("not json")
    assert load(tmp_path / "db", cache=None).cached_lens == ps.cached_lens


def test_append(tmp_path):
    save(PrototypeSet.build(protos(3)), tmp_path / "db")
    db = append(tmp_path / "db", protos(1, start=3))
    assert len(db) == 4
    assert load(tmp_path / "db").ids == ["p0", "p1", "p2", "p3"]
    assert verify(tmp_path / "db") == []


def test_append_duplicate_leaves_db_unchanged(tmp_path):
    save(PrototypeSet.build(protos(3)), tmp_path / "db")
    before = {p.name: p.read_bytes() for p in (tmp_path / "db").rglob("*") if p.is_file()}
    with pytest.raises(ValueError):
        append(tmp_path / "db", protos(1, start=2))
    after = {p.name: p.read_bytes() for p in (tmp_path / "db").rglob("*") if p.is_file()}
    assert before == after


def test_append_failure_removes_new_blobs(tmp_path):
    save(PrototypeSet.build(protos(2)), tmp_path / "db")
    with pytest.raises(Fault):
        with fault_after(3, before=True, hard=False):  # 2 blob writes, then the sidecar
            append(tmp_path / "db", protos(2, start=2))
    assert verify(tmp_path / "db") == []
    assert load(tmp_path / "db").ids == ["p0", "p1"]


def test_failure_after_manifest_commit_keeps_blobs(tmp_path):
    save(PrototypeSet.build(protos(2)), tmp_path / "db")
    # two blob writes, the sidecar, then the manifest rename; fail right after it
    with pytest.raises(Fault):
        with fault_after(4, before=False, hard=False):
            append(tmp_path / "db", protos(2, start=2))
    assert load(tmp_path / "db").ids == ["p0", "p1", "p2", "p3"]
    assert verify(tmp_path / "db") == []


def test_interrupted_save_keeps_original(tmp_path):
    original = PrototypeSet.build(protos(3))
    save(original, tmp_path / "db")
    with pytest.raises(Fault):
        with fault_after(1, before=True, hard=False):
            save(PrototypeSet.build(protos(2, prefix="q")), tmp_path / "db")
    assert content(load(tmp_path / "db")) == content(original)
    assert not list(tmp_path.glob(".db.tmp-*"))


def test_two_step_replace_recovers(tmp_path, monkeypatch):
    original = PrototypeSet.build(protos(2))
    save(original, tmp_path / "db")
    # simulate a crash between the two renames of the fallback path
    (tmp_path / "db").rename(tmp_path / ".db.old-123")
    assert content(load(tmp_path / "db")) == content(original)
    monkeypatch.setattr(store, "_exchange", lambda a, b: False)
    save(PrototypeSet.build(protos(1, prefix="q")), tmp_path / "db")
    assert load(tmp_path / "db").ids == ["q0"]
    assert not list(tmp_path.glob(".db.old-*"))


def test_verify_reports_problems(tmp_path):
    save(PrototypeSet.build(protos(2)), tmp_path / "db")
    (tmp_path / "db" / "blobs" / "stray").write_bytes(b"x")
    side = tmp_path / "db" / "lengths.lzma-6.json"
    data = json.loads(side.read_text())
    data["lengths"]["p0"] += 1
    side.write_text(json.dumps(data))
    problems = verify(tmp_path / "db")
    assert any("stray" in p for p in problems)
    assert any("p0" in p for p in problems)


def test_stats_accounting(tmp_path):
    docs = [ByteDocument(f"s{i}", bytes([65 + i % 26]) * 727) for i in range(40)]
    save(PrototypeSet.build(docs, cache=None), tmp_path / "db")
    s = stats(tmp_path / "db")
    on_disk = sum(p.stat().st_size for p in (tmp_path / "db" / "blobs").iterdir())
    assert s["blob_bytes"] == s["blob_bytes_on_disk"] == on_disk == 40 * 727
    assert s["median_blob_bytes"] == 727


def test_paper_scale_storage(tmp_path):
    # 1,366 prototypes of 727 B come to roughly 1 MB on disk
    docs = [ByteDocument(f"s{i:04d}", (b"%04d" % i) * 181 + b"<p></p>"[:3]) for i in range(1366)]
    assert {len(d) for d in docs} == {727}
    lens = {d.id: 1 for d in docs}
    save(PrototypeSet(tuple(docs), cached_lens=lens), tmp_path / "db")
    total = stats(tmp_path / "db")["blob_bytes_on_disk"]
    assert total == pytest.approx(0.947e6, rel=0.05)


def test_concurrent_reader_sees_whole_states(tmp_path):
    save(PrototypeSet.build(protos(2)), tmp_path / "db")
    valid = {2 + i for i in range(0, 21)}
    seen, errors = [], []
    done = threading.Event()

    def reader():
        while not done.is_set():
            try:
                seen.append(len(load(tmp_path / "db", cache=LengthCache())))
            except Exception as exc:  # noqa: BLE001
                errors.append(exc)

    t = threading.Thread(target=reader)
    t.start()
    try:
        for i in range(20):
            append(tmp_path / "db", protos(1, start=2 + i))
    finally:
        done.set()
        t.join()
    assert not errors
    assert set(seen) <= valid
