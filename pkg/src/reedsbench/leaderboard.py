"""Leaderboard store: append-only JSONL of ingested runs, ranked per (task, preset).

Each line of the store is one ingest: ``{"run_id": ..., "entries": [...]}``.
A later line for the same run_id replaces the earlier one when the index is
rebuilt, so re-ingesting is idempotent while the file keeps the full history.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .presets import PRESETS_BY_ID, presets_csv
from .schemas import SchemaError, validate


class LeaderboardError(ValueError):
    pass


@dataclass(frozen=True)
class LeaderboardEntry:
    algorithm: str
    run_id: str
    task: str
    preset_id: int
    metric: str
    accuracy: float | None
    mean_ns: float | None
    std_ns: float | None
    feasible: bool
    submitted_at: str
    status: str = "ok"

    @property
    def ranked(self) -> bool:
        return self.status == "ok" and self.accuracy is not None and self.mean_ns is not None

    def rank_key(self) -> tuple:
        return (-self.accuracy, self.mean_ns, self.std_ns, self.algorithm, self.run_id)

    def to_dict(self) -> dict:
        return asdict(self)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def entries_from_report(report: dict, submitted_at: str | None = None) -> list[LeaderboardEntry]:
    """One entry per (algorithm, preset) of a schema-valid run report."""
    try:
        validate(report, "run_report")
    except SchemaError as exc:
        raise LeaderboardError(str(exc)) from None
    stamp = submitted_at or _now()
    out = []
    for e in report["entries"]:
        if e["preset_id"] not in PRESETS_BY_ID:
            raise LeaderboardError(f"unknown preset {e['preset_id']}")
        acc, timing = e["accuracy"], e["timing"]
        harness = timing["harness"] if timing else None
        out.append(LeaderboardEntry(
            algorithm=e["algorithm"],
            run_id=report["run_id"],
            task=e["task"],
            preset_id=e["preset_id"],
            metric=acc["metric"] if acc else "f1",
            accuracy=acc["f1"] if acc else None,
            mean_ns=harness["mean_ns"] if harness else None,
            std_ns=harness["std_ns"] if harness else None,
            feasible=bool(harness and harness["feasible"]),
            submitted_at=stamp,
            status=e["status"],
        ))
    return out


class Leaderboard:
    """Single writer, many readers. Reads see a consistent snapshot."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._runs: dict[str, list[LeaderboardEntry]] = {}
        if self.path.exists():
            self._rebuild()

    def _rebuild(self) -> None:
        with open(self.path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                try:
                    doc = json.loads(line)
                    entries = [LeaderboardEntry(**e) for e in doc["entries"]]
                except (ValueError, KeyError, TypeError) as exc:
                    raise LeaderboardError(f"corrupt store line {lineno}: {exc}") from None
                self._runs[doc["run_id"]] = entries

    def ingest(self, report: dict, submitted_at: str | None = None) -> int:
        """Store every (algorithm, preset) entry of ``report``; returns how many."""
        entries = entries_from_report(report, submitted_at)
        line = json.dumps({"run_id": report["run_id"],
                           "entries": [e.to_dict() for e in entries]}, sort_keys=True)
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line + "\n")
                f.flush()
                os.fsync(f.fileno())
            runs = dict(self._runs)
            runs[report["run_id"]] = entries
            self._runs = runs
        return len(entries)

    def entries(self) -> list[LeaderboardEntry]:
        runs = self._runs
        return [e for rid in sorted(runs) for e in runs[rid]]

    def query(self, task: str, preset_id: int, limit: int | None = None) -> list[LeaderboardEntry]:
        if preset_id not in PRESETS_BY_ID:
            raise LeaderboardError(f"unknown preset {preset_id}")
        if limit is not None and limit < 0:
            raise LeaderboardError("limit must be >= 0")
        rows = [e for e in self.entries()
                if e.task == task and e.preset_id == preset_id and e.ranked]
        rows.sort(key=LeaderboardEntry.rank_key)
        return rows if limit is None else rows[:limit]

    def query_doc(self, task: str, preset_id: int, limit: int | None = None) -> dict:
        return {"task": task, "preset_id": preset_id,
                "entries": [e.to_dict() for e in self.query(task, preset_id, limit)]}


# --------------------------------------------------------------------------
# HTTP


class _Handler(BaseHTTPRequestHandler):
    board: Leaderboard
    max_body = 64 << 20

    def log_message(self, fmt, *args):  # keep test output clean
        pass

    def _send(self, status: int, body: bytes, ctype: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, status: int, doc) -> None:
        self._send(status, (json.dumps(doc, sort_keys=True) + "\n").encode(), "application/json")

    def do_GET(self):
        url = urlparse(self.path)
        if url.path == "/presets":
            return self._send(HTTPStatus.OK, presets_csv().encode(), "text/csv")
        if url.path != "/leaderboard":
            return self._json(HTTPStatus.NOT_FOUND, {"error": "not found"})
        q = parse_qs(url.query)
        try:
            task = q.get("task", ["detection"])[0]
            preset = int(q["preset"][0])
            limit = int(q["limit"][0]) if "limit" in q else None
            doc = self.board.query_doc(task, preset, limit)
        except KeyError:
            return self._json(HTTPStatus.BAD_REQUEST, {"error": "missing preset"})
        except (ValueError, LeaderboardError) as exc:
            return self._json(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
        self._json(HTTPStatus.OK, doc)

    def do_POST(self):
        if urlparse(self.path).path != "/runs":
            return self._json(HTTPStatus.NOT_FOUND, {"error": "not found"})
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            length = -1
        if not 0 < length <= self.max_body:
            return self._json(HTTPStatus.BAD_REQUEST, {"error": "bad content length"})
        try:
            report = json.loads(self.rfile.read(length))
            count = self.board.ingest(report)
        except ValueError as exc:  # includes LeaderboardError and JSON errors
            return self._json(HTTPStatus.BAD_REQUEST, {"error": str(exc)})
        self._json(HTTPStatus.CREATED, {"run_id": report["run_id"], "entries": count})


def make_server(board: Leaderboard, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {"board": board})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server
