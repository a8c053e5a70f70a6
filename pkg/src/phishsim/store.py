"""On-disk prototype database.

Layout::

    <root>/manifest.json           schema version, compressor, threshold, entries
    <root>/blobs/<id>              sanitized prototype bytes
    <root>/lengths.<kind>.json     compressed-length sidecar per compressor
    <root>/LOCK                    advisory writer lock

``manifest.json`` is the commit point. Blobs are only ever added, and the
manifest is swapped in with a single rename, so a reader that loads the
manifest first always sees a complete snapshot.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import fcntl
import errno
import hashlib
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path
from typing import Sequence
from urllib.parse import quote

from .ncd import CACHE, ByteDocument, CompressorKind, Label, LengthCache, compressed_len
from .prototypes import PrototypeSet, Threshold

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
LOCK = "LOCK"


class CorruptDb(RuntimeError):
    pass


def blob_name(doc_id: str) -> str:
    name = quote(doc_id, safe="-_.~@+=")
    return name.replace(".", "%2E") if name in (".", "..") else name


def sidecar_name(c: CompressorKind) -> str:
    return f"lengths.{c.label}.json"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _fsync_write(path: Path, data: bytes):
    with open(path, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())


_AT_FDCWD = -100
_RENAME_EXCHANGE = 2


def _exchange(a: Path, b: Path) -> bool:
    """Atomically swap two paths with renameat2; False where unsupported."""
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c"), use_errno=True)
        fn = libc.renameat2
    except (OSError, AttributeError, TypeError):
        return False
    rc = fn(_AT_FDCWD, os.fsencode(a), _AT_FDCWD, os.fsencode(b), _RENAME_EXCHANGE)
    if rc == 0:
        return True
    err = ctypes.get_errno()
    if err in (errno.ENOSYS, errno.EINVAL, errno.EOPNOTSUPP):
        return False
    raise OSError(err, os.strerror(err), str(b))


def _backups(target: Path) -> list[Path]:
    return sorted(target.parent.glob(f".{target.name}.old-*"), key=lambda p: p.stat().st_mtime)


# Commit primitives are module-level so tests can inject faults around them.
def _commit_file(tmp: Path, target: Path):
    os.replace(tmp, target)


def _commit_dir(tmp: Path, target: Path):
    if not target.exists():
        os.rename(tmp, target)
        return
    if _exchange(tmp, target):
        shutil.rmtree(tmp, ignore_errors=True)  # now holds the old database
        return
    # two-step fallback; a crash in between is repaired by _recover
    backup = target.with_name(f".{target.name}.old-{os.getpid()}")
    os.rename(target, backup)
    os.rename(tmp, target)
    shutil.rmtree(backup, ignore_errors=True)


def _recover(root: Path):
    """Put back a database left aside by an interrupted two-step replace."""
    if (root / MANIFEST).exists() or root.exists() and any(root.iterdir()):
        return
    olds = [p for p in _backups(root) if (p / MANIFEST).exists()]
    if olds:
        if root.exists():
            root.rmdir()
        os.rename(olds[-1], root)


def _write_blob(blobs: Path, doc: ByteDocument) -> dict:
    name = blob_name(doc.id)
    tmp = blobs / f".{name}.tmp"
    _fsync_write(tmp, doc.data)
    os.replace(tmp, blobs / name)
    return _entry(doc, name)


def _entry(doc: ByteDocument, name: str) -> dict:
    return {
        "id": doc.id,
        "blob": f"blobs/{name}",
        "sha256": _sha256(doc.data),
        "size": len(doc.data),
        "label": doc.label.value,
        "timestamp": doc.timestamp.isoformat() if doc.timestamp else None,
        "source_path": doc.source_path,
    }


def _atomic_json(root: Path, name: str, payload: dict):
    fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=root)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write((json.dumps(payload, indent=1, sort_keys=True) + "\n").encode())
            fh.flush()
            os.fsync(fh.fileno())
        _commit_file(Path(tmp), root / name)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


@contextmanager
def writer_lock(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    with open(root / LOCK, "a+") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


@dataclass(frozen=True)
class PrototypeDb:
    root: Path
    manifest: dict

    @property
    def compressor(self) -> CompressorKind:
        c = self.manifest["compressor"]
        return CompressorKind.of(c["name"], c["level"])

    @property
    def ids(self) -> list[str]:
        return [e["id"] for e in self.manifest["prototypes"]]

    def __len__(self) -> int:
        return len(self.manifest["prototypes"])


def _manifest_payload(ps: PrototypeSet, entries: list[dict], created_at: datetime) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "compressor": {"name": ps.compressor.name.value, "level": ps.compressor.level},
        "threshold": ps.threshold.d,
        "created_at": created_at.isoformat(),
        "prototypes": entries,
    }


def save(ps: PrototypeSet, root: str | Path) -> PrototypeDb:
    """Write ``ps`` as a fresh database, replacing any existing one at ``root``."""
    root = Path(root)
    root.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{root.name}.tmp-", dir=root.parent))
    try:
        blobs = tmp / "blobs"
        blobs.mkdir()
        entries = [_write_blob(blobs, p) for p in ps.prototypes]
        names = [e["blob"] for e in entries]
        if len(set(names)) != len(names):
            raise ValueError("prototype ids collide on disk")
        payload = _manifest_payload(ps, entries, ps.created_at)
        _atomic_json(tmp, sidecar_name(ps.compressor),
                     {"compressor": payload["compressor"], "lengths": dict(ps.cached_lens)})
        _atomic_json(tmp, MANIFEST, payload)
        (tmp / LOCK).touch()
        _commit_dir(tmp, root)
    except OSError as exc:
        raise OSError(exc.errno, f"saving prototype DB to {root}: {exc.strerror}") from exc
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)
    return PrototypeDb(root, payload)


def open_db(root: str | Path) -> PrototypeDb:
    root = Path(root)
    _recover(root)
    path = root / MANIFEST
    try:
        manifest = json.loads(path.read_text())
    except FileNotFoundError:
        raise CorruptDb(f"{root}: no {MANIFEST}") from None
    except (OSError, ValueError) as exc:
        raise CorruptDb(f"{path}: unreadable manifest: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise CorruptDb(f"{path}: unsupported schema version {manifest.get('schema_version')!r}")
    ids = [e["id"] for e in manifest.get("prototypes", [])]
    if len(set(ids)) != len(ids):
        raise CorruptDb(f"{path}: duplicate prototype ids")
    return PrototypeDb(root, manifest)


def _read_sidecar(root: Path, c: CompressorKind) -> dict[str, int]:
    try:
        side = json.loads((root / sidecar_name(c)).read_text())
    except (OSError, ValueError):
        return {}
    stored = side.get("compressor", {})
    if stored.get("name") != c.name.value or stored.get("level") != c.level:
        return {}
    return {k: int(v) for k, v in side.get("lengths", {}).items()}


def _parse_date(value: str | None) -> date | None:
    return date.fromisoformat(value) if value else None


def load(root: str | Path, compressor: CompressorKind | None = None,
         cache: LengthCache | None = CACHE) -> PrototypeSet:
    """Verified load: every blob is hash-checked against the manifest.

    Sidecar lengths are used only when they were computed with the requested
    compressor; anything missing is recomputed.
    """
    db = open_db(root)
    c = compressor or db.compressor
    protos = []
    for e in db.manifest["prototypes"]:
        path = db.root / e["blob"]
        try:
            data = path.read_bytes()
        except OSError:
            raise CorruptDb(f"{db.root}: missing blob {e['blob']} for {e['id']!r}") from None
        if _sha256(data) != e["sha256"]:
            raise CorruptDb(f"{db.root}: hash mismatch in blob {e['blob']} for {e['id']!r}")
        protos.append(ByteDocument(e["id"], data, e.get("source_path") or "",
                                   Label(e.get("label", "phishing")), _parse_date(e.get("timestamp"))))
    side = _read_sidecar(db.root, c)
    lens = {p.id: side[p.id] if p.id in side else compressed_len(p, c, cache) for p in protos}
    if cache is not None:
        for p in protos:
            cache.put(p, c, lens[p.id])
    created = datetime.fromisoformat(db.manifest["created_at"])
    return PrototypeSet(tuple(protos), c, Threshold(db.manifest["threshold"]), lens, created)


def append(root: str | Path, new_protos: Sequence[ByteDocument],
           cache: LengthCache | None = CACHE) -> PrototypeDb:
    root = Path(root)
    with writer_lock(root):
        db = open_db(root)
        present = set(db.ids)
        new_ids = [p.id for p in new_protos]
        dupes = sorted((present & set(new_ids)) | {i for i in new_ids if new_ids.count(i) > 1})
        if dupes:
            raise ValueError(f"prototype ids already present: {dupes[:5]}")
        known = {e["blob"] for e in db.manifest["prototypes"]}
        if known & {f"blobs/{blob_name(i)}" for i in new_ids}:
            raise ValueError("new prototype ids collide on disk with existing blobs")

        c = db.compressor
        written: list[Path] = []
        try:
            entries = []
            for p in new_protos:
                entries.append(_write_blob(root / "blobs", p))
                written.append(root / entries[-1]["blob"])
            lens = _read_sidecar(root, c)
            lens.update({p.id: compressed_len(p, c, cache) for p in new_protos})
            _atomic_json(root, sidecar_name(c), {"compressor": db.manifest["compressor"],
                                                 "lengths": lens})
            manifest = dict(db.manifest)
            manifest["prototypes"] = db.manifest["prototypes"] + entries
            _atomic_json(root, MANIFEST, manifest)
        except BaseException:
            # the failure may have come after the manifest rename, so only
            # drop blobs the manifest on disk does not reference
            try:
                live = {e["blob"] for e in open_db(root).manifest["prototypes"]}
            except CorruptDb:
                live = set()
            for path in written:
                if f"blobs/{path.name}" not in live:
                    path.unlink(missing_ok=True)
            raise
        return PrototypeDb(root, manifest)


def verify(root: str | Path, cache: LengthCache | None = None) -> list[str]:
    """Return a list of problems; empty when the database is consistent."""
    problems = []
    try:
        db = open_db(root)
        ps = load(root, cache=cache)
    except CorruptDb as exc:
        return [str(exc)]
    side = _read_sidecar(db.root, db.compressor)
    for p in ps.prototypes:
        fresh = compressed_len(p, db.compressor, cache=None)
        if p.id not in side:
            problems.append(f"sidecar lacks {p.id!r}")
        elif side[p.id] != fresh:
            problems.append(f"sidecar length for {p.id!r} is {side[p.id]}, recomputed {fresh}")
    listed = {Path(e["blob"]).name for e in db.manifest["prototypes"]}
    blobs_dir = db.root / "blobs"
    if blobs_dir.is_dir():
        for f in sorted(blobs_dir.iterdir()):
            if f.name not in listed and not f.name.startswith("."):
                problems.append(f"unlisted blob {f.name}")
    return problems


def stats(root: str | Path) -> dict:
    db = open_db(root)
    blobs = [db.root / e["blob"] for e in db.manifest["prototypes"]]
    on_disk = sum(p.stat().st_size for p in blobs if p.exists())
    sizes = sorted(e["size"] for e in db.manifest["prototypes"])
    return {
        "prototypes": len(db),
        "compressor": db.compressor.label,
        "threshold": db.manifest["threshold"],
        "created_at": db.manifest["created_at"],
        "blob_bytes": sum(sizes),
        "blob_bytes_on_disk": on_disk,
        "median_blob_bytes": sizes[len(sizes) // 2] if sizes else 0,
    }
