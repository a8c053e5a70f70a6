"""Helpers to run the gateway in-process for tests."""

import http.client
import json
import threading
from contextlib import contextmanager

from phishsim.gateway import GatewayConfig, GatewayServer, PhishSimService


@contextmanager
def running(config: GatewayConfig):
    service = PhishSimService(config)
    server = GatewayServer(service, "127.0.0.1", 0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield service, server.server_address[1]
    finally:
        server.shutdown()
        server.server_close()


def request(port, method, path, body=b"", headers=None, conn=None):
    own = conn is None
    conn = conn or http.client.HTTPConnection("127.0.0.1", port, timeout=30)
    try:
        conn.request(method, path, body=body, headers=headers or {})
        resp = conn.getresponse()
        return resp.status, json.loads(resp.read() or b"null")
    finally:
        if own:
            conn.close()
