"""HTTP front end: classify rendered pages, queue reports, apply updates.

Every request reads one immutable PrototypeSet snapshot; an update builds
the next snapshot off to the side and swaps the reference in one step, so a
classification never sees a half-applied update and never waits for one.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from . import store
from .ncd import ByteDocument, CompressorKind, Label
from .prototypes import PrototypeSet, Threshold, classify, extract_prototypes, incremental_update, union
from .sanitizer import SanitizeError, sanitize_html

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

LABEL_HEADER = "X-Confirmed-Label"


@dataclass
class GatewayConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    db: str | None = None
    spool: str | None = None
    compressor: str | None = None
    threshold: float | None = None
    max_body_bytes: int = 2 * 1024 * 1024
    strip_attributes: bool = False

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides) -> "GatewayConfig":
        values = {}
        if path:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
            values.update(raw.get("gateway", raw))
        if os.environ.get("PHISHSIM_DB"):
            values["db"] = os.environ["PHISHSIM_DB"]
        values.update({k: v for k, v in overrides.items() if v is not None})
        known = set(cls.__dataclass_fields__)
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown gateway config keys: {sorted(unknown)}")
        return cls(**values)


@dataclass(frozen=True)
class Snapshot:
    version: int
    prototypes: PrototypeSet


class ConflictError(RuntimeError):
    pass


class Unavailable(RuntimeError):
    pass


class BadRequest(ValueError):
    pass


@dataclass
class LatencyLog:
    samples: list[float] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def add(self, ms: float):
        with self.lock:
            self.samples.append(ms)

    def summary(self) -> dict:
        with self.lock:
            s = list(self.samples)
        if not s:
            return {"count": 0}
        return {"count": len(s), "mean_ms": float(np.mean(s)),
                "p50_ms": float(np.percentile(s, 50)), "p95_ms": float(np.percentile(s, 95))}


class PhishSimService:
    def __init__(self, config: GatewayConfig):
        self.config = config
        self.db = Path(config.db) if config.db else None
        self.spool = Path(config.spool) if config.spool else (
            self.db.with_name(self.db.name + ".spool") if self.db else None)
        self._snapshot: Snapshot | None = None
        self._update_lock = threading.Lock()
        self.latency = LatencyLog()
        if self.spool:
            self.spool.mkdir(parents=True, exist_ok=True)
        if self.db and (self.db / store.MANIFEST).exists():
            self.reload()

    @property
    def snapshot(self) -> Snapshot | None:
        return self._snapshot

    def reload(self):
        c = CompressorKind.of(self.config.compressor) if self.config.compressor else None
        ps = store.load(self.db, compressor=c)
        if self.config.threshold is not None:
            ps = PrototypeSet(ps.prototypes, ps.compressor, Threshold(self.config.threshold),
                              ps.cached_lens, ps.created_at)
        self.install(ps)

    def install(self, ps: PrototypeSet):
        version = self._snapshot.version + 1 if self._snapshot else 1
        self._snapshot = Snapshot(version, ps)

    def _sanitize(self, body: bytes, doc_id: str, label: Label = Label.UNKNOWN) -> ByteDocument:
        if not body:
            raise BadRequest("empty body")
        if len(body) > self.config.max_body_bytes:
            raise BadRequest(f"body exceeds {self.config.max_body_bytes} bytes")
        try:
            return sanitize_html(ByteDocument(doc_id, body, label=label),
                                 self.config.strip_attributes)
        except SanitizeError as exc:
            raise BadRequest(str(exc)) from None

    def classify(self, body: bytes) -> dict:
        start = time.perf_counter()
        snap = self._snapshot
        if snap is None or not len(snap.prototypes):
            raise Unavailable("no prototype database loaded")
        doc = self._sanitize(body, "request")
        v = classify(doc, snap.prototypes)
        elapsed = (time.perf_counter() - start) * 1000
        self.latency.add(elapsed)
        ps = snap.prototypes
        return {
            "decision": v.decision.value,
            "min_distance": v.min_distance.value,
            "nearest_prototype": v.nearest_prototype,
            "threshold": ps.threshold.d,
            "compressor": ps.compressor.label,
            "elapsed_ms": elapsed,
            "snapshot": snap.version,
            "prototypes": len(ps),
        }

    def report(self, body: bytes, label: str | None) -> str:
        if not label:
            raise BadRequest(f"missing {LABEL_HEADER} header")
        try:
            label = Label(label.strip().lower())
        except ValueError:
            raise BadRequest(f"bad label {label!r}") from None
        if label is Label.UNKNOWN:
            raise BadRequest("label must be phishing or legitimate")
        if self.spool is None:
            raise Unavailable("no spool directory configured")
        self._sanitize(body, "report")
        qid = f"r{time.time_ns():020d}-{uuid.uuid4().hex[:8]}"
        tmp = self.spool / f".{qid}.tmp"
        tmp.write_bytes(json.dumps({"id": qid, "label": label.value}).encode() + b"\n" + body)
        os.replace(tmp, self.spool / f"{qid}.report")
        return qid

    def queued(self) -> list[Path]:
        return sorted(self.spool.glob("*.report")) if self.spool else []

    def update(self) -> dict:
        if not self._update_lock.acquire(blocking=False):
            raise ConflictError("an update is already running")
        try:
            snap = self._snapshot
            if snap is None:
                raise Unavailable("no prototype database loaded")
            files = self.queued()
            batch = []
            for f in files:
                head, _, body = f.read_bytes().partition(b"\n")
                meta = json.loads(head)
                batch.append(self._sanitize(body, meta["id"], Label(meta["label"])))
            ps = snap.prototypes
            if not batch:
                return {"processed": 0, "rejected": 0, "new_prototypes": 0, "prototypes": len(ps)}
            if len(ps):
                new_ps, verdicts = incremental_update(batch, ps)
                rejected = sum(1 for d, v in zip(batch, verdicts)
                               if d.label is Label.PHISHING and not v.is_phishing)
            else:
                missed = [d for d in batch if d.label is Label.PHISHING]
                rejected = len(missed)
                new_ps = union(ps, extract_prototypes(missed, ps.threshold, ps.compressor)[0]) \
                    if missed else ps
            added = new_ps.prototypes[len(ps):]
            if added and self.db:
                store.append(self.db, added)
            self.install(new_ps)
            for f in files:
                f.unlink(missing_ok=True)
            return {"processed": len(batch), "rejected": rejected,
                    "new_prototypes": len(added), "prototypes": len(new_ps),
                    "snapshot": self._snapshot.version}
        finally:
            self._update_lock.release()


class Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    # headers and body go out as separate writes; without this, delayed ACKs
    # stall every keep-alive response by ~40 ms
    disable_nagle_algorithm = True
    server: "GatewayServer"

    def log_message(self, fmt, *args):
        log.debug("%s - " + fmt, self.address_string(), *args)

    def _send(self, status: int, payload: dict):
        data = (json.dumps(payload) + "\n").encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        cap = self.server.service.config.max_body_bytes
        if length > cap:
            self.close_connection = True
            raise BadRequest(f"body exceeds {cap} bytes")
        return self.rfile.read(length) if length else b""

    def do_GET(self):
        svc = self.server.service
        if self.path == "/health":
            snap = svc.snapshot
            self._send(200, {"status": "ok", "snapshot": snap.version if snap else None,
                             "prototypes": len(snap.prototypes) if snap else 0,
                             "queued": len(svc.queued())})
        elif self.path == "/metrics":
            self._send(200, {"classify_latency": svc.latency.summary()})
        else:
            self._send(404, {"error": "not found"})

    def do_POST(self):
        svc = self.server.service
        try:
            if self.path == "/classify":
                self._send(200, svc.classify(self._body()))
            elif self.path == "/report":
                body = self._body()
                self._send(202, {"id": svc.report(body, self.headers.get(LABEL_HEADER))})
            elif self.path == "/admin/update":
                self._body()
                self._send(200, svc.update())
            else:
                self._send(404, {"error": "not found"})
        except BadRequest as exc:
            self._send(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
        except Unavailable as exc:
            self._send(HTTPStatus.SERVICE_UNAVAILABLE, {"error": str(exc)})
        except ConflictError as exc:
            self._send(HTTPStatus.CONFLICT, {"error": str(exc)})


class GatewayServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, service: PhishSimService, host: str | None = None, port: int | None = None):
        self.service = service
        super().__init__((host or service.config.host,
                          service.config.port if port is None else port), Handler)


def serve(config: GatewayConfig):
    server = GatewayServer(PhishSimService(config))
    host, port = server.server_address[:2]
    log.info("serving on http://%s:%d", host, port)
    try:
        server.serve_forever()
    finally:
        server.server_close()
