"""Inspecting reverse proxy: classify each request, forward allows, answer blocks.

One request per connection (responses carry ``Connection: close``). The model
bundle is read once per request from an attribute that reloads replace
atomically, so a request in flight finishes on the bundle it started with.

Admin: ``POST /-/reload`` from a loopback address, or SIGHUP, reloads the
bundle from disk. SIGTERM/SIGINT stop accepting and drain in-flight requests.
"""
from __future__ import annotations

import http.client
import ipaddress
import json
import logging
import queue
import signal
import socket
import socketserver
import threading
import time
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from urllib.parse import urlsplit

from .errors import BindError, BundleLoadError, MalformedRequest
from .http_model import HttpRequest, parse_raw_request
from .pipeline import BLOCK, WafModelBundle, classify, load_bundle

log = logging.getLogger(__name__)

DEFAULT_PORT = 8080
ADMIN_RELOAD_PATH = "/-/reload"
MAX_HEAD_BYTES = 64 * 1024
HOP_BY_HOP = frozenset({"connection", "keep-alive", "proxy-authenticate", "proxy-authorization",
                        "te", "trailer", "trailers", "transfer-encoding", "upgrade",
                        "proxy-connection"})


def _is_loopback(host: str) -> bool:
    if host == "localhost":
        return True
    try:
        return ipaddress.ip_address(host).is_loopback
    except ValueError:
        return False


@dataclass(frozen=True)
class ProxyConfig:
    upstream_url: str
    bundle_path: str
    listen_port: int = DEFAULT_PORT
    listen_host: str = "0.0.0.0"
    block_status: int = 403
    fail_mode: str = "closed"
    max_body_bytes: int = 1 << 20
    audit_log_path: str | None = None
    upstream_timeout: float = 10.0

    def __post_init__(self):
        parts = urlsplit(self.upstream_url)
        if parts.scheme != "http" or not parts.hostname:
            raise ValueError(f"upstream_url must be http://host[:port], got {self.upstream_url!r}")
        if self.fail_mode not in ("open", "closed"):
            raise ValueError("fail_mode must be 'open' or 'closed'")
        if self.max_body_bytes <= 0:
            raise ValueError("max_body_bytes must be > 0")
        if not 0 <= self.listen_port <= 65535:
            raise ValueError("listen_port out of range")
        if not 100 <= self.block_status <= 599:
            raise ValueError("block_status must be an HTTP status code")
        if (self.listen_port and _is_loopback(parts.hostname)
                and self.upstream_port == self.listen_port):
            raise ValueError("upstream is this proxy's own loopback port")

    @property
    def upstream_host(self) -> str:
        return urlsplit(self.upstream_url).hostname

    @property
    def upstream_port(self) -> int:
        return urlsplit(self.upstream_url).port or 80

    @property
    def upstream_prefix(self) -> str:
        return urlsplit(self.upstream_url).path.rstrip("/")


class AuditLog:
    """Single-writer JSONL audit channel fed by handler threads."""

    def __init__(self, path: str | None):
        self.path = path
        self._q: queue.Queue = queue.Queue()
        self._fh = open(path, "a", encoding="utf-8") if path else None
        self._thread = threading.Thread(target=self._run, name="audit-writer", daemon=True)
        self._thread.start()

    def write(self, record: dict) -> None:
        self._q.put(record)

    def _run(self):
        while True:
            rec = self._q.get()
            if rec is None:
                break
            if self._fh is not None:
                self._fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=True) + "\n")
                if self._q.empty():
                    self._fh.flush()
            self._q.task_done()
        self._q.task_done()

    def flush(self) -> None:
        self._q.join()

    def close(self) -> None:
        self._q.put(None)
        self._thread.join()
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class _Reject(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _read_head(rfile) -> bytes:
    head = b""
    while True:
        line = rfile.readline(MAX_HEAD_BYTES + 1)
        if not line:
            if head:
                raise _Reject(400, "connection closed inside the request head")
            return b""
        head += line
        if len(head) > MAX_HEAD_BYTES:
            raise _Reject(431, "request head too large")
        if line in (b"\r\n", b"\n") and head != line:
            return head
        if line in (b"\r\n", b"\n"):
            head = b""  # tolerate leading blank lines


def _content_length(head: bytes) -> int:
    length = 0
    for line in head.split(b"\n")[1:]:
        name, sep, value = line.partition(b":")
        if not sep:
            continue
        key = name.strip().lower()
        if key == b"transfer-encoding":
            raise _Reject(501, "transfer-encoding is not supported")
        if key == b"content-length":
            try:
                length = int(value.strip())
            except ValueError:
                raise _Reject(400, "invalid content-length") from None
            if length < 0:
                raise _Reject(400, "invalid content-length")
    return length


class ProxyHandler(socketserver.StreamRequestHandler):
    server: "WafProxyServer"

    def handle(self):
        srv = self.server
        request_id = uuid.uuid4().hex
        client = self.client_address[0] if isinstance(self.client_address, tuple) else "?"
        audit = {"request_id": request_id, "client_address": client, "method": None, "path": None,
                 "action": None, "l1_flag": None, "l2_class": None, "features": None,
                 "reason": None, "status": None, "latency_us": None,
                 "bundle_fingerprint": None}
        try:
            head = _read_head(self.rfile)
            if not head:
                return  # idle connection, nothing to audit
            length = _content_length(head)
            first = head.split(b"\n", 1)[0].split(b" ")
            if len(first) >= 2:
                audit["method"] = first[0].decode("latin-1")
                audit["path"] = first[1].decode("latin-1").split("?", 1)[0]
            if length > srv.config.max_body_bytes:
                self._oversize(head, length, audit)
                return
            body = self.rfile.read(length) if length else b""
            if len(body) != length:
                raise _Reject(400, "body shorter than content-length")
            try:
                req = parse_raw_request(head + body)
            except MalformedRequest as exc:
                raise _Reject(400, f"malformed request: {exc}") from None
            audit["method"], audit["path"] = req.method, req.path
            if req.method == "POST" and req.path == ADMIN_RELOAD_PATH:
                self._admin_reload(client, audit)
                return
            self._inspect(req, audit)
        except _Reject as exc:
            audit.update(action="reject", reason=str(exc))
            self._send_json(exc.status, {"error": str(exc), "request_id": request_id}, audit)
        except (ConnectionError, socket.timeout) as exc:
            audit.update(action=audit["action"] or "abort", reason=f"client connection: {exc}")
        finally:
            if audit["action"] is not None:
                audit["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="microseconds")
                srv.audit.write(audit)

    # --- paths -----------------------------------------------------------------

    def _inspect(self, req: HttpRequest, audit: dict):
        srv = self.server
        bundle = srv.bundle  # one bundle for the whole request, even across a reload
        audit["bundle_fingerprint"] = bundle.fingerprint
        t0 = time.perf_counter_ns()
        try:
            verdict = classify(bundle, req)
        except Exception as exc:
            audit["latency_us"] = (time.perf_counter_ns() - t0) // 1000
            log.exception("classification failed for %s", audit["request_id"])
            if srv.config.fail_mode == "closed":
                audit.update(action="block", reason=f"inspection error (fail closed): {exc}",
                             l2_class="inspection_error")
                self._block("inspection_error", audit)
            else:
                audit.update(action="allow", reason=f"inspection error (fail open): {exc}")
                self._forward(req.method, req.target, list(req.headers), req.body, audit)
            return
        audit["latency_us"] = (time.perf_counter_ns() - t0) // 1000
        audit.update(action=verdict.action, l1_flag=verdict.l1_flag, l2_class=verdict.l2_class,
                     features=list(verdict.features), reason=verdict.reason)
        if verdict.action == BLOCK:
            self._block(verdict.l2_class, audit)
        else:
            self._forward(req.method, req.target, list(req.headers), req.body, audit)

    def _oversize(self, head: bytes, length: int, audit: dict):
        srv = self.server
        reason = f"body of {length} bytes exceeds max_body_bytes={srv.config.max_body_bytes}"
        if srv.config.fail_mode == "closed":
            audit.update(action="block", l2_class="oversize", reason=reason)
            self._block("oversize", audit)
            return
        body = self.rfile.read(length)
        try:
            req = parse_raw_request(head + body)
        except MalformedRequest as exc:
            raise _Reject(400, f"malformed request: {exc}") from None
        audit.update(action="allow", reason=reason + " (fail open, not inspected)")
        self._forward(req.method, req.target, list(req.headers), req.body, audit)

    def _admin_reload(self, client: str, audit: dict):
        if not _is_loopback(client):
            audit.update(action="reject", reason="admin endpoint is loopback-only")
            self._send_json(403, {"error": "admin endpoint is loopback-only",
                                  "request_id": audit["request_id"]}, audit)
            return
        ok, detail = self.server.reload_bundle()
        audit.update(action="admin", reason=f"reload: {detail}",
                     bundle_fingerprint=self.server.bundle.fingerprint)
        self._send_json(200 if ok else 500, {"reloaded": ok, "detail": detail,
                                             "fingerprint": self.server.bundle.fingerprint}, audit)

    def _block(self, cls: str | None, audit: dict):
        self._send_json(self.server.config.block_status,
                        {"blocked": True, "class": cls, "request_id": audit["request_id"]}, audit)

    def _forward(self, method: str, target: str, headers: list, body: bytes, audit: dict):
        cfg = self.server.config
        connection_tokens = {t.strip().lower() for n, v in headers if n.lower() == "connection"
                             for t in v.split(",")}
        out = [(n, v) for n, v in headers
               if n.lower() not in HOP_BY_HOP and n.lower() not in connection_tokens]
        client = audit["client_address"]
        xff = [v for n, v in out if n.lower() == "x-forwarded-for"]
        out = [(n, v) for n, v in out if n.lower() != "x-forwarded-for"]
        out.append(("X-Forwarded-For", ", ".join(xff + [client])))
        out.append(("Connection", "close"))
        conn = http.client.HTTPConnection(cfg.upstream_host, cfg.upstream_port,
                                          timeout=cfg.upstream_timeout)
        try:
            conn.putrequest(method, cfg.upstream_prefix + target, skip_host=True,
                            skip_accept_encoding=True)
            for n, v in out:
                conn.putheader(n, v)
            conn.endheaders(body if body else None)
            resp = conn.getresponse()
            payload = resp.read()
            status, reason, resp_headers = resp.status, resp.reason, resp.getheaders()
        except (OSError, http.client.HTTPException) as exc:
            audit["upstream_error"] = f"{type(exc).__name__}: {exc}"
            self._send_json(502, {"error": "upstream unreachable", "request_id": audit["request_id"]},
                            audit)
            return
        finally:
            conn.close()
        relay = [(n, v) for n, v in resp_headers
                 if n.lower() not in HOP_BY_HOP and n.lower() != "content-length"]
        relay += [("Content-Length", str(len(payload))), ("Connection", "close")]
        self._send(status, reason, relay, payload, audit)

    # --- output ----------------------------------------------------------------

    def _send_json(self, status: int, obj: dict, audit: dict):
        body = (json.dumps(obj, sort_keys=True) + "\n").encode("utf-8")
        reason = http.client.responses.get(status, "")
        self._send(status, reason, [("Content-Type", "application/json"),
                                    ("Content-Length", str(len(body))), ("Connection", "close")],
                   body, audit)

    def _send(self, status: int, reason: str, headers: list, body: bytes, audit: dict):
        audit["status"] = status
        head = f"HTTP/1.1 {status} {reason}\r\n" + "".join(f"{n}: {v}\r\n" for n, v in headers)
        self.wfile.write(head.encode("latin-1") + b"\r\n" + body)
        self.wfile.flush()


class WafProxyServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = False  # server_close() waits for in-flight handlers
    block_on_close = True

    def __init__(self, config: ProxyConfig, bundle: WafModelBundle | None = None):
        self.config = config
        if bundle is None:
            bundle = _load(config.bundle_path)
        self.bundle = bundle
        self._reload_lock = threading.Lock()
        self.audit = AuditLog(config.audit_log_path)
        try:
            super().__init__((config.listen_host, config.listen_port), ProxyHandler)
        except OSError as exc:
            self.audit.close()
            raise BindError(f"cannot bind {config.listen_host}:{config.listen_port}: {exc}") from exc

    @property
    def port(self) -> int:
        return self.server_address[1]

    def reload_bundle(self, path: str | None = None) -> tuple[bool, str]:
        """Swap in a freshly loaded bundle; on any failure keep the current one."""
        path = path or self.config.bundle_path
        with self._reload_lock:
            try:
                new = load_bundle(path)
            except Exception as exc:
                log.error("bundle reload from %s failed, keeping %s: %s",
                          path, self.bundle.fingerprint, exc)
                return False, f"{type(exc).__name__}: {exc}"
            old = self.bundle.fingerprint
            self.bundle = new
        log.info("bundle reloaded: %s -> %s", old, new.fingerprint)
        return True, new.fingerprint

    def server_close(self):
        super().server_close()
        self.audit.close()


def _load(path: str) -> WafModelBundle:
    try:
        return load_bundle(path)
    except Exception as exc:
        raise BundleLoadError(f"cannot load bundle {path}: {type(exc).__name__}: {exc}") from exc


def serve(config: ProxyConfig, *, install_signals: bool = True,
          ready: threading.Event | None = None) -> None:
    """Run until SIGTERM/SIGINT (or ``shutdown()`` from another thread)."""
    server = WafProxyServer(config)
    log.info("listening on %s:%d, upstream %s, bundle %s", config.listen_host, server.port,
             config.upstream_url, server.bundle.fingerprint)
    if install_signals and threading.current_thread() is threading.main_thread():
        def stop(signum, frame):
            log.info("signal %d: draining and shutting down", signum)
            threading.Thread(target=server.shutdown, daemon=True).start()

        signal.signal(signal.SIGTERM, stop)
        signal.signal(signal.SIGINT, stop)
        if hasattr(signal, "SIGHUP"):
            signal.signal(signal.SIGHUP, lambda s, f: server.reload_bundle())
    if ready is not None:
        ready.set()
    try:
        server.serve_forever(poll_interval=0.2)
    finally:
        server.server_close()
        log.info("proxy stopped")
