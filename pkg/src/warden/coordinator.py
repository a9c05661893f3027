"""Central alert service: node registry, deduplicating ingest, durable ledger.

All state lives in one append-only line ledger (JSON object per line with an
embedded CRC32 over the line's canonical form). Every mutating request is
appended and fsynced before the response goes out, so any acknowledged write
survives a crash; recovery replays intact lines and discards a torn tail.
Alert ingest deduplicates on (node_id, alert_id), which gives node agents
safe at-least-once retry semantics. Agents poll for action commands rather
than holding server-initiated connections.
"""

from __future__ import annotations

import json
import os
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
import zlib
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

DEFAULT_LIMIT = 100
MAX_LIMIT = 1000

LEDGER_ENV_VAR = "WARDEN_LEDGER_PATH"


class CorruptLedger(ValueError):
    """A non-tail ledger line failed its checksum or cannot be parsed."""


class CoordinatorUnavailable(ConnectionError):
    """The coordinator endpoint cannot be reached."""


def _canonical(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def encode_ledger_line(event: dict) -> str:
    """Event line with an embedded crc over the canonical event body."""
    crc = zlib.crc32(_canonical(event).encode("utf-8"))
    return _canonical({**event, "crc": f"{crc:08x}"})


def decode_ledger_line(line: str) -> dict:
    obj = json.loads(line)
    if not isinstance(obj, dict) or "crc" not in obj:
        raise ValueError("not a ledger event line")
    stored = obj.pop("crc")
    crc = zlib.crc32(_canonical(obj).encode("utf-8"))
    if f"{crc:08x}" != stored:
        raise ValueError(f"checksum mismatch (stored {stored}, computed {crc:08x})")
    return obj


def read_ledger(path) -> list[dict]:
    """Replay intact lines; a torn final line (crash tail) is discarded.

    A bad line anywhere before the tail raises CorruptLedger: appends are
    sequential, so mid-file damage cannot come from a crash.
    """
    if not os.path.exists(path):
        return []
    with open(path, "rb") as fh:
        blob = fh.read()
    events: list[dict] = []
    if not blob:
        return events
    lines = blob.split(b"\n")
    lines.pop()  # bytes after the final newline: a torn write, silently discarded
    for i, raw in enumerate(lines):
        if not raw.strip():
            continue
        try:
            events.append(decode_ledger_line(raw.decode("utf-8")))
        except (ValueError, UnicodeDecodeError) as exc:
            raise CorruptLedger(f"{path}: line {i + 1}: {exc}") from None
    return events


@dataclass
class NodeRecord:
    node_id: str
    hostname: str
    registered_t_ns: int
    last_seen_t_ns: int

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "hostname": self.hostname,
            "registered_t_ns": self.registered_t_ns,
            "last_seen_t_ns": self.last_seen_t_ns,
        }


@dataclass
class ActionCommand:
    command_id: str
    job_id: str
    node_id: str
    action: str
    issued_t_ns: int
    status: str = "pending"  # "pending" | "acked" | "failed"

    def to_dict(self) -> dict:
        return {
            "command_id": self.command_id,
            "job_id": self.job_id,
            "node_id": self.node_id,
            "action": self.action,
            "issued_t_ns": self.issued_t_ns,
            "status": self.status,
        }


_ALERT_FIELDS = ("alert_id", "job_id", "t_ns", "window_index", "score", "model_id", "rule", "action")


class CoordinatorState:
    """In-memory state; every mutation flows through apply() so live handling
    and crash recovery share one code path."""

    def __init__(self):
        self.nodes: dict[str, NodeRecord] = {}
        self.idempotency: dict[str, str] = {}
        self.alerts: list[dict] = []  # index = ledger_seq - 1
        self.dedup: dict[tuple[str, str], int] = {}  # (node_id, alert_id) -> seq
        self.commands: dict[str, ActionCommand] = {}
        self.node_counter = 0
        self.command_counter = 0

    @property
    def next_seq(self) -> int:
        return len(self.alerts) + 1

    def apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "node":
            record = NodeRecord(
                node_id=event["node_id"],
                hostname=event["hostname"],
                registered_t_ns=event["t_ns"],
                last_seen_t_ns=event["t_ns"],
            )
            self.nodes[record.node_id] = record
            key = event.get("idempotency_key")
            if key:
                self.idempotency[key] = record.node_id
            self.node_counter = max(self.node_counter, int(record.node_id.split("-")[-1]))
        elif kind == "alert":
            seq = event["seq"]
            if seq != self.next_seq:
                raise CorruptLedger(f"alert seq {seq} breaks density (expected {self.next_seq})")
            self.alerts.append(dict(event))
            self.dedup[(event["node_id"], event["alert_id"])] = seq
            node = self.nodes.get(event["node_id"])
            if node:
                node.last_seen_t_ns = max(node.last_seen_t_ns, event["received_t_ns"])
        elif kind == "command":
            cmd = ActionCommand(
                command_id=event["command_id"],
                job_id=event["job_id"],
                node_id=event["node_id"],
                action=event["action"],
                issued_t_ns=event["t_ns"],
            )
            self.commands[cmd.command_id] = cmd
            self.command_counter = max(self.command_counter, int(cmd.command_id.split("-")[-1]))
        elif kind == "ack":
            cmd = self.commands.get(event["command_id"])
            if cmd and cmd.status == "pending":
                cmd.status = "acked"
        else:
            raise CorruptLedger(f"unknown ledger event kind {kind!r}")


def recover(ledger_path) -> CoordinatorState:
    """Rebuild service state from the ledger file (missing file = empty state)."""
    state = CoordinatorState()
    for event in read_ledger(ledger_path):
        state.apply(event)
    return state


class CoordinatorService:
    """Thread-safe service core behind the HTTP layer (usable in-process too)."""

    def __init__(self, ledger_path):
        self.ledger_path = str(ledger_path)
        self._lock = threading.Lock()
        self.state = recover(self.ledger_path)
        directory = os.path.dirname(os.path.abspath(self.ledger_path))
        os.makedirs(directory, exist_ok=True)
        self._fh = open(self.ledger_path, "ab")

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def _append(self, event: dict) -> None:
        """Durably append one event: written, flushed and fsynced before return."""
        line = encode_ledger_line(event) + "\n"
        self._fh.write(line.encode("utf-8"))
        self._fh.flush()
        os.fsync(self._fh.fileno())
        self.state.apply(event)

    # --- operations; each returns (http_status, body_dict) -------------------

    def register_node(self, hostname: str, idempotency_key: str | None = None) -> tuple[int, dict]:
        if not hostname or not isinstance(hostname, str):
            return 400, {"error": "hostname must be a non-empty string"}
        with self._lock:
            if idempotency_key and idempotency_key in self.state.idempotency:
                node_id = self.state.idempotency[idempotency_key]
                return 200, self.state.nodes[node_id].to_dict()
            self.state.node_counter += 1
            node_id = f"node-{self.state.node_counter}"
            self._append(
                {
                    "event": "node",
                    "node_id": node_id,
                    "hostname": hostname,
                    "t_ns": time.time_ns(),
                    "idempotency_key": idempotency_key,
                }
            )
            return 201, self.state.nodes[node_id].to_dict()

    def ingest_alert(self, node_id: str, alert: dict) -> tuple[int, dict]:
        problem = self._check_alert(alert)
        if problem:
            return 422, {"error": problem}
        with self._lock:
            if node_id not in self.state.nodes:
                return 404, {"error": f"unknown node {node_id!r}"}
            key = (node_id, alert["alert_id"])
            if key in self.state.dedup:
                return 200, dict(self.state.alerts[self.state.dedup[key] - 1])
            event = {
                "event": "alert",
                "seq": self.state.next_seq,
                "node_id": node_id,
                "received_t_ns": time.time_ns(),
                **{k: alert[k] for k in _ALERT_FIELDS},
            }
            self._append(event)
            stored = dict(self.state.alerts[-1])
            return 201, stored

    @staticmethod
    def _check_alert(alert: dict) -> str | None:
        if not isinstance(alert, dict):
            return "alert body must be an object"
        for fieldname in _ALERT_FIELDS:
            if fieldname not in alert:
                return f"missing field {fieldname!r}"
        if not isinstance(alert["alert_id"], str) or not alert["alert_id"]:
            return "alert_id must be a non-empty string"
        score = alert["score"]
        if not isinstance(score, (int, float)) or isinstance(score, bool) or not 0.0 <= float(score) <= 1.0:
            return f"score must be in [0, 1], got {score!r}"
        if not isinstance(alert["t_ns"], int):
            return "t_ns must be an integer"
        if not isinstance(alert["window_index"], int):
            return "window_index must be an integer"
        return None

    def list_alerts(
        self,
        job_id: str | None = None,
        node_id: str | None = None,
        since_seq: int = 0,
        limit: int = DEFAULT_LIMIT,
    ) -> tuple[int, dict]:
        if limit < 1 or limit > MAX_LIMIT:
            return 400, {"error": f"limit must be in [1, {MAX_LIMIT}]"}
        if since_seq < 0:
            return 400, {"error": "since_seq must be >= 0"}
        with self._lock:
            snapshot = self.state.alerts[since_seq:]
        out = []
        next_seq = since_seq  # cursor = highest seq scanned, so filtered paging advances
        for record in snapshot:
            next_seq = record["seq"]
            if job_id is not None and record["job_id"] != job_id:
                continue
            if node_id is not None and record["node_id"] != node_id:
                continue
            out.append(dict(record))
            if len(out) >= limit:
                break
        return 200, {"alerts": out, "next_seq": next_seq}

    def command_action(self, job_id: str, node_id: str, action: str) -> tuple[int, dict]:
        with self._lock:
            if node_id not in self.state.nodes:
                return 404, {"error": f"unknown node {node_id!r}"}
            self.state.command_counter += 1
            command_id = f"cmd-{self.state.command_counter}"
            self._append(
                {
                    "event": "command",
                    "command_id": command_id,
                    "job_id": job_id,
                    "node_id": node_id,
                    "action": action,
                    "t_ns": time.time_ns(),
                }
            )
            return 201, self.state.commands[command_id].to_dict()

    def poll_commands(self, node_id: str) -> tuple[int, dict]:
        with self._lock:
            if node_id not in self.state.nodes:
                return 404, {"error": f"unknown node {node_id!r}"}
            pending = [c.to_dict() for c in self.state.commands.values() if c.node_id == node_id and c.status == "pending"]
        return 200, {"commands": pending}

    def ack_command(self, command_id: str) -> tuple[int, dict]:
        with self._lock:
            cmd = self.state.commands.get(command_id)
            if cmd is None:
                return 404, {"error": f"unknown command {command_id!r}"}
            if cmd.status == "pending":
                self._append({"event": "ack", "command_id": command_id, "t_ns": time.time_ns()})
            return 200, cmd.to_dict()

    def health(self) -> tuple[int, dict]:
        with self._lock:
            return 200, {"status": "ok", "ledger_seq": len(self.state.alerts)}


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    service: CoordinatorService = None  # injected by make_server

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, status: int, body: dict) -> None:
        payload = (_canonical(body) + "\n").encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _read_body(self) -> dict | None:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return {}
        try:
            obj = json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            return None
        return obj if isinstance(obj, dict) else None

    def do_GET(self):
        parsed = urllib.parse.urlparse(self.path)
        parts = [p for p in parsed.path.split("/") if p]
        if parts == ["v1", "health"]:
            return self._send(*self.service.health())
        if parts == ["v1", "alerts"]:
            query = urllib.parse.parse_qs(parsed.query)

            def q(name, default=None):
                return query[name][0] if name in query else default

            try:
                since_seq = int(q("since_seq", "0"))
                limit = int(q("limit", str(DEFAULT_LIMIT)))
            except ValueError:
                return self._send(400, {"error": "since_seq and limit must be integers"})
            return self._send(
                *self.service.list_alerts(
                    job_id=q("job_id"), node_id=q("node_id"), since_seq=since_seq, limit=limit
                )
            )
        if len(parts) == 4 and parts[:2] == ["v1", "nodes"] and parts[3] == "commands":
            return self._send(*self.service.poll_commands(parts[2]))
        return self._send(404, {"error": f"no route for GET {parsed.path}"})

    def do_POST(self):
        parsed = urllib.parse.urlparse(self.path)
        parts = [p for p in parsed.path.split("/") if p]
        body = self._read_body()
        if body is None:
            return self._send(400, {"error": "request body must be a JSON object"})
        if parts == ["v1", "nodes"]:
            return self._send(
                *self.service.register_node(
                    body.get("hostname", ""), self.headers.get("Idempotency-Key")
                )
            )
        if parts == ["v1", "alerts"]:
            node_id = body.get("node_id", "")
            return self._send(*self.service.ingest_alert(node_id, body))
        if len(parts) == 4 and parts[:2] == ["v1", "jobs"] and parts[3] == "actions":
            return self._send(
                *self.service.command_action(parts[2], body.get("node_id", ""), body.get("action", ""))
            )
        if len(parts) == 4 and parts[:2] == ["v1", "commands"] and parts[3] == "ack":
            return self._send(*self.service.ack_command(parts[2]))
        return self._send(404, {"error": f"no route for POST {parsed.path}"})


def make_server(listen: str, ledger_path) -> tuple[ThreadingHTTPServer, CoordinatorService]:
    """Bind the service; listen is "host:port" (port 0 picks a free port)."""
    host, _, port = listen.rpartition(":")
    service = CoordinatorService(ledger_path)
    handler = type("BoundHandler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host or "127.0.0.1", int(port)), handler)
    server.daemon_threads = True
    return server, service


def serve_forever(listen: str, ledger_path) -> None:
    server, service = make_server(listen, ledger_path)
    host, port = server.server_address[:2]
    print(f"coordinator listening on {host}:{port}, ledger at {service.ledger_path}", flush=True)
    try:
        server.serve_forever()
    finally:
        service.close()


class CoordinatorClient:
    """Small HTTP client for node agents and the CLI."""

    def __init__(self, base_url: str, timeout: float = 5.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def _request(self, method: str, path: str, body: dict | None = None, headers: dict | None = None):
        url = self.base_url + path
        data = _canonical(body).encode("utf-8") if body is not None else None
        request = urllib.request.Request(url, data=data, method=method)
        request.add_header("Content-Type", "application/json")
        for key, value in (headers or {}).items():
            request.add_header(key, value)
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as response:
                return response.status, json.loads(response.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            payload = exc.read().decode("utf-8", errors="replace")
            try:
                return exc.code, json.loads(payload)
            except ValueError:
                return exc.code, {"error": payload}
        except (urllib.error.URLError, ConnectionError, TimeoutError, OSError) as exc:
            raise CoordinatorUnavailable(f"{method} {url}: {exc}") from None

    def register(self, hostname: str, idempotency_key: str | None = None) -> str:
        headers = {"Idempotency-Key": idempotency_key} if idempotency_key else {}
        status, body = self._request("POST", "/v1/nodes", {"hostname": hostname}, headers)
        if status not in (200, 201):
            raise CoordinatorUnavailable(f"registration failed: {status} {body}")
        return body["node_id"]

    def post_alert(self, node_id: str, alert) -> tuple[bool, dict]:
        """Returns (created, stored_record); raises on transport failure or rejection."""
        from .detector import Alert, alert_to_dict

        payload = alert_to_dict(alert) if isinstance(alert, Alert) else dict(alert)
        payload["node_id"] = node_id
        status, body = self._request("POST", "/v1/alerts", payload)
        if status == 201:
            return True, body
        if status == 200:
            return False, body
        raise CoordinatorUnavailable(f"alert rejected: {status} {body}")

    def list_alerts(self, job_id=None, node_id=None, since_seq=0, limit=DEFAULT_LIMIT) -> dict:
        query = {"since_seq": since_seq, "limit": limit}
        if job_id:
            query["job_id"] = job_id
        if node_id:
            query["node_id"] = node_id
        status, body = self._request("GET", "/v1/alerts?" + urllib.parse.urlencode(query))
        if status != 200:
            raise CoordinatorUnavailable(f"list_alerts failed: {status} {body}")
        return body

    def command_action(self, job_id: str, node_id: str, action: str) -> dict:
        status, body = self._request("POST", f"/v1/jobs/{job_id}/actions", {"node_id": node_id, "action": action})
        if status != 201:
            raise CoordinatorUnavailable(f"command failed: {status} {body}")
        return body

    def poll_commands(self, node_id: str) -> list[dict]:
        status, body = self._request("GET", f"/v1/nodes/{node_id}/commands")
        if status != 200:
            raise CoordinatorUnavailable(f"poll failed: {status} {body}")
        return body["commands"]

    def ack_command(self, command_id: str) -> dict:
        status, body = self._request("POST", f"/v1/commands/{command_id}/ack", {})
        if status != 200:
            raise CoordinatorUnavailable(f"ack failed: {status} {body}")
        return body

    def health(self) -> dict:
        status, body = self._request("GET", "/v1/health")
        if status != 200:
            raise CoordinatorUnavailable(f"health failed: {status} {body}")
        return body
