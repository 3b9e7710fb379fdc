"""Low-latency order scoring over newline-delimited JSON.

The service binds a trained model to one store snapshot at startup and
refuses to start on a version mismatch, so a stale store can never
produce a score.  Requests are independent; a malformed line gets an
error response and the connection stays usable.

Transports: stdin/stdout (for harnessing) and a threaded TCP listener.
"""
from __future__ import annotations

import json
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lnn import LnnModel
from .records import EntityType, normalize_entity_value, EntityKey
from .store import StoreHandle

_ENTITY_BY_NAME = {e.value: e for e in EntityType}


class ServiceError(ValueError):
    pass


@dataclass
class ScoreService:
    model: LnnModel
    store: StoreHandle
    latencies_micros: list[int] = field(default_factory=list)

    def __post_init__(self):
        mv = self.model.version()
        if mv != self.store.model_version:
            raise ServiceError(
                f"store/model version mismatch: store {self.store.model_version}, "
                f"model {mv}")

    def handle_line(self, line: str) -> str:
        t0 = time.perf_counter_ns()
        try:
            req = json.loads(line)
        except json.JSONDecodeError as exc:
            return json.dumps({"error": f"bad json: {exc.msg}"}, sort_keys=True)
        try:
            resp = self._score(req)
        except (ServiceError, ValueError, KeyError, TypeError) as exc:
            resp = {"error": str(exc) or exc.__class__.__name__,
                    "order_id": req.get("order_id") if isinstance(req, dict) else None}
        micros = (time.perf_counter_ns() - t0) // 1000
        if "error" not in resp:
            resp["latency_micros"] = int(micros)
            self.latencies_micros.append(int(micros))
        return json.dumps(resp, sort_keys=True)

    def _score(self, req: dict) -> dict:
        if not isinstance(req, dict):
            raise ServiceError("request must be a JSON object")
        order_id = req.get("order_id")
        if not order_id:
            raise ServiceError("missing order_id")
        features = req.get("features")
        if not isinstance(features, list):
            raise ServiceError("missing features array")
        features = np.asarray(features, dtype=np.float64)
        lookups = {}
        used = []
        for name, raw in (req.get("entities") or {}).items():
            etype = _ENTITY_BY_NAME.get(name)
            if etype is None:
                raise ServiceError(f"unknown entity type {name!r}")
            value = normalize_entity_value(str(raw))
            if not value:
                continue
            emb = self.store.get_embedding(EntityKey(etype, value))
            if emb is not None:
                lookups[etype] = emb
                used.append(name)
        score = self.model.score_with_store(features, lookups)
        return {"order_id": order_id, "score": score, "used_entities": sorted(used)}


def serve_stdio(service: ScoreService, stdin, stdout) -> None:
    """One response line per request line; EOF shuts down."""
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        stdout.write(service.handle_line(line) + "\n")
        stdout.flush()


class _TcpHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            out = self.server.service.handle_line(line)  # type: ignore[attr-defined]
            self.wfile.write(out.encode() + b"\n")
            self.wfile.flush()


class TcpScoreServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, service: ScoreService, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _TcpHandler)
        self.service = service

    @property
    def port(self) -> int:
        return self.server_address[1]

    def serve_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def score_over_tcp(host: str, port: int, requests: list[dict], timeout: float = 30.0) -> list[dict]:
    """Client helper: send requests down one connection, collect responses."""
    out = []
    with socket.create_connection((host, port), timeout=timeout) as sock:
        rfile = sock.makefile("rb")
        for req in requests:
            sock.sendall((json.dumps(req) + "\n").encode())
            line = rfile.readline()
            if not line:
                raise ServiceError("connection closed by server")
            out.append(json.loads(line))
    return out


@dataclass
class LatencyReport:
    p50_micros: int
    p95_micros: int
    p99_micros: int
    throughput_per_s: float
    n: int


def latency_report(latencies_micros: list[int], min_samples: int = 100) -> LatencyReport:
    """Nearest-rank percentiles: p is the value at index ceil(p/100 * n) in
    the sorted sample (1-based)."""
    n = len(latencies_micros)
    if n < min_samples:
        raise ServiceError(f"need at least {min_samples} samples, got {n}")
    s = sorted(latencies_micros)

    def pct(p: int) -> int:
        rank = -(-p * n // 100)   # ceil(p/100 * n)
        return s[max(1, min(n, rank)) - 1]

    total_s = sum(s) / 1e6
    return LatencyReport(
        p50_micros=pct(50), p95_micros=pct(95), p99_micros=pct(99),
        throughput_per_s=n / total_s if total_s > 0 else float("inf"),
        n=n,
    )
