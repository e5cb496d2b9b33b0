"""Durable local persistence and playback.

One SQLite file holds sensors, criteria (current version plus immutable
snapshots per run), runs, and test suggestions; frame bytes live in a
content-addressed blob directory next to it. A run is written in a single
transaction, so after any interruption it is either fully present or
absent.
"""

from __future__ import annotations

import hashlib
import json
import sqlite3
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import capture
from .errors import (
    DanglingFrame,
    DuplicateRun,
    FrameMissing,
    UnknownCriterion,
    UnknownSensor,
)
from .model import (
    Criterion,
    Frame,
    FrameEncoding,
    SensorRun,
    SensorSpec,
    TestSuggestion,
    Valence,
    canonical_json,
    criterion_from_dict,
    sensor_run_from_dict,
    sensor_spec_from_dict,
    test_suggestion_from_dict,
)

_SCHEMA = """
CREATE TABLE IF NOT EXISTS sensors (
    sensor_id TEXT PRIMARY KEY,
    payload BLOB NOT NULL
);
CREATE TABLE IF NOT EXISTS criteria (
    criterion_id TEXT PRIMARY KEY,
    sensor_id TEXT NOT NULL,
    payload BLOB NOT NULL
);
CREATE TABLE IF NOT EXISTS criteria_snapshots (
    snapshot_hash TEXT PRIMARY KEY,
    sensor_id TEXT NOT NULL,
    payload BLOB NOT NULL
);
CREATE TABLE IF NOT EXISTS frames (
    frame_id TEXT PRIMARY KEY,
    captured_at INTEGER NOT NULL,
    source_id TEXT NOT NULL,
    encoding TEXT NOT NULL,
    tags TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS runs (
    run_id TEXT PRIMARY KEY,
    sensor_id TEXT NOT NULL,
    ticked_at INTEGER NOT NULL,
    skipped INTEGER NOT NULL,
    outcome TEXT,
    payload BLOB NOT NULL
);
CREATE INDEX IF NOT EXISTS runs_by_sensor ON runs (sensor_id, run_id);
CREATE TABLE IF NOT EXISTS run_results (
    run_id TEXT NOT NULL,
    criterion_id TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS run_frames (
    run_id TEXT NOT NULL,
    frame_id TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS suggestions (
    criterion_id TEXT NOT NULL,
    payload BLOB NOT NULL
);
"""


@dataclass(frozen=True)
class RunQuery:
    sensor_id: str
    since: Optional[int] = None  # ticked_at >= since (ms)
    until: Optional[int] = None  # ticked_at <= until (ms)
    criterion_id: Optional[str] = None
    outcome: Optional[Valence] = None
    cursor: Optional[str] = None  # last run_id of the previous page
    limit: int = 100


class Store:
    def __init__(self, data_dir: str, max_runs: Optional[int] = None):
        self.data_dir = Path(data_dir)
        self.frames_dir = self.data_dir / "frames"
        self.frames_dir.mkdir(parents=True, exist_ok=True)
        self.max_runs = max_runs
        self._conn = sqlite3.connect(self.data_dir / "sensorforge.db", check_same_thread=False)
        self._conn.execute("PRAGMA journal_mode=WAL")
        self._conn.execute("PRAGMA synchronous=FULL")
        self._conn.executescript(_SCHEMA)
        self._conn.commit()
        self._lock = threading.RLock()
        # test hook: called with a stage name inside record_run's transaction
        self.kill_hook: Optional[Callable[[str], None]] = None

    def close(self) -> None:
        self._conn.close()

    # -- sensors -----------------------------------------------------------

    def put_sensor(self, spec: SensorSpec) -> None:
        with self._lock:
            self._conn.execute(
                "INSERT OR REPLACE INTO sensors (sensor_id, payload) VALUES (?, ?)",
                (spec.sensor_id, canonical_json(spec)),
            )
            self._conn.commit()

    def get_sensor(self, sensor_id: str) -> SensorSpec:
        row = self._conn.execute(
            "SELECT payload FROM sensors WHERE sensor_id = ?", (sensor_id,)
        ).fetchone()
        if row is None:
            raise UnknownSensor(sensor_id)
        return sensor_spec_from_dict(json.loads(row[0]))

    def list_sensors(self) -> list:
        rows = self._conn.execute("SELECT payload FROM sensors ORDER BY sensor_id").fetchall()
        return [sensor_spec_from_dict(json.loads(r[0])) for r in rows]

    def delete_sensor(self, sensor_id: str) -> None:
        with self._lock:
            self.get_sensor(sensor_id)
            self._conn.execute("DELETE FROM sensors WHERE sensor_id = ?", (sensor_id,))
            self._conn.execute("DELETE FROM criteria WHERE sensor_id = ?", (sensor_id,))
            self._conn.commit()

    # -- criteria ----------------------------------------------------------

    def put_criterion(self, criterion: Criterion) -> None:
        with self._lock:
            self.get_sensor(criterion.sensor_id)
            self._conn.execute(
                "INSERT OR REPLACE INTO criteria (criterion_id, sensor_id, payload) VALUES (?, ?, ?)",
                (criterion.criterion_id, criterion.sensor_id, canonical_json(criterion)),
            )
            self._conn.commit()

    def get_criterion(self, criterion_id: str) -> Criterion:
        row = self._conn.execute(
            "SELECT payload FROM criteria WHERE criterion_id = ?", (criterion_id,)
        ).fetchone()
        if row is None:
            raise UnknownCriterion(criterion_id)
        return criterion_from_dict(json.loads(row[0]))

    def list_criteria(self, sensor_id: str) -> list:
        self.get_sensor(sensor_id)
        rows = self._conn.execute(
            "SELECT payload FROM criteria WHERE sensor_id = ? ORDER BY criterion_id",
            (sensor_id,),
        ).fetchall()
        return [criterion_from_dict(json.loads(r[0])) for r in rows]

    def delete_criterion(self, criterion_id: str) -> None:
        with self._lock:
            self.get_criterion(criterion_id)
            self._conn.execute("DELETE FROM criteria WHERE criterion_id = ?", (criterion_id,))
            self._conn.commit()

    def snapshot_criteria(self, sensor_id: str) -> tuple:
        """Persist and return (hash, criteria) for the sensor's current
        criteria; identical criteria always hash identically."""
        with self._lock:
            criteria = self.list_criteria(sensor_id)
            digest = hashlib.sha256()
            for c in criteria:
                digest.update(canonical_json(c))
                digest.update(b"\n")
            snapshot_hash = digest.hexdigest()
            payload = canonical_json([json.loads(canonical_json(c)) for c in criteria])
            self._conn.execute(
                "INSERT OR IGNORE INTO criteria_snapshots (snapshot_hash, sensor_id, payload)"
                " VALUES (?, ?, ?)",
                (snapshot_hash, sensor_id, payload),
            )
            self._conn.commit()
            return snapshot_hash, tuple(criteria)

    def get_snapshot(self, snapshot_hash: str) -> tuple:
        row = self._conn.execute(
            "SELECT payload FROM criteria_snapshots WHERE snapshot_hash = ?", (snapshot_hash,)
        ).fetchone()
        if row is None:
            return ()
        return tuple(criterion_from_dict(d) for d in json.loads(row[0]))

    # -- frames ------------------------------------------------------------

    def put_frame(self, data: bytes, captured_at: int, source_id: str, tags=()) -> str:
        """Content-addressed, idempotent write: same bytes, same id, one copy."""
        encoding = capture.decode_image(data)  # raises DecodeError on junk
        frame_id = capture.frame_id_for(data)
        ext = "png" if encoding is FrameEncoding.PNG else "jpg"
        blob = self.frames_dir / f"{frame_id}.{ext}"
        if not blob.exists():
            tmp = blob.with_suffix(".tmp")
            tmp.write_bytes(data)
            tmp.replace(blob)
        with self._lock:
            self._conn.execute(
                "INSERT OR IGNORE INTO frames (frame_id, captured_at, source_id, encoding, tags)"
                " VALUES (?, ?, ?, ?, ?)",
                (
                    frame_id,
                    captured_at,
                    source_id,
                    encoding.value,
                    json.dumps(dict(tags), sort_keys=True),
                ),
            )
            self._conn.commit()
        return frame_id

    def put_captured(self, captured: capture.CapturedFrame) -> str:
        f = captured.frame
        return self.put_frame(captured.data, f.captured_at, f.source_id, tags=f.tag_map)

    def has_frame(self, frame_id: str) -> bool:
        return (
            self._conn.execute(
                "SELECT 1 FROM frames WHERE frame_id = ?", (frame_id,)
            ).fetchone()
            is not None
        )

    def get_frame(self, frame_id: str) -> Frame:
        row = self._conn.execute(
            "SELECT captured_at, source_id, encoding, tags FROM frames WHERE frame_id = ?",
            (frame_id,),
        ).fetchone()
        if row is None:
            raise FrameMissing(frame_id)
        return Frame(
            frame_id=frame_id,
            captured_at=row[0],
            source_id=row[1],
            encoding=FrameEncoding(row[2]),
            tags=json.loads(row[3]),
        )

    def get_frame_bytes(self, frame_id: str) -> tuple:
        """Returns (bytes, encoding)."""
        frame = self.get_frame(frame_id)
        ext = "png" if frame.encoding is FrameEncoding.PNG else "jpg"
        blob = self.frames_dir / f"{frame_id}.{ext}"
        if not blob.exists():
            raise FrameMissing(frame_id)
        return blob.read_bytes(), frame.encoding

    # -- runs --------------------------------------------------------------

    def record_run(self, run: SensorRun) -> None:
        """Single-transaction durable write; the engine only acknowledges a
        tick after this returns."""
        with self._lock:
            for frame_id in run.frame_ids:
                if not self.has_frame(frame_id):
                    raise DanglingFrame(frame_id)
            exists = self._conn.execute(
                "SELECT 1 FROM runs WHERE run_id = ?", (run.run_id,)
            ).fetchone()
            if exists:
                raise DuplicateRun(run.run_id)
            outcome = None
            if run.verdict is not None and run.verdict.outcome is not None:
                outcome = run.verdict.outcome.value
            try:
                if self.kill_hook:
                    self.kill_hook("begin")
                self._conn.execute(
                    "INSERT INTO runs (run_id, sensor_id, ticked_at, skipped, outcome, payload)"
                    " VALUES (?, ?, ?, ?, ?, ?)",
                    (
                        run.run_id,
                        run.sensor_id,
                        run.ticked_at,
                        int(run.skipped),
                        outcome,
                        canonical_json(run),
                    ),
                )
                if self.kill_hook:
                    self.kill_hook("mid")
                self._conn.executemany(
                    "INSERT INTO run_results (run_id, criterion_id) VALUES (?, ?)",
                    [(run.run_id, r.criterion_id) for r in run.results],
                )
                self._conn.executemany(
                    "INSERT INTO run_frames (run_id, frame_id) VALUES (?, ?)",
                    [(run.run_id, fid) for fid in run.frame_ids],
                )
                if self.kill_hook:
                    self.kill_hook("before_commit")
                self._conn.commit()
            except BaseException:
                self._conn.rollback()
                raise
            self._enforce_retention(run.sensor_id)

    def _enforce_retention(self, sensor_id: str) -> None:
        if self.max_runs is None:
            return
        rows = self._conn.execute(
            "SELECT run_id FROM runs WHERE sensor_id = ? ORDER BY run_id", (sensor_id,)
        ).fetchall()
        excess = [r[0] for r in rows[: max(0, len(rows) - self.max_runs)]]
        if not excess:
            return
        marks = ",".join("?" * len(excess))
        self._conn.execute(f"DELETE FROM runs WHERE run_id IN ({marks})", excess)
        self._conn.execute(f"DELETE FROM run_results WHERE run_id IN ({marks})", excess)
        self._conn.execute(f"DELETE FROM run_frames WHERE run_id IN ({marks})", excess)
        self._conn.commit()
        self._gc_frames()

    def _gc_frames(self) -> None:
        referenced = {
            r[0] for r in self._conn.execute("SELECT DISTINCT frame_id FROM run_frames")
        }
        for row in self._conn.execute("SELECT payload FROM criteria").fetchall():
            for ex in json.loads(row[0]).get("examples") or ():
                if ex.get("frame_ref"):
                    referenced.add(ex["frame_ref"])
        rows = self._conn.execute("SELECT frame_id, encoding FROM frames").fetchall()
        doomed = [(fid, enc) for fid, enc in rows if fid not in referenced]
        for fid, enc in doomed:
            ext = "png" if enc == "png" else "jpg"
            (self.frames_dir / f"{fid}.{ext}").unlink(missing_ok=True)
            self._conn.execute("DELETE FROM frames WHERE frame_id = ?", (fid,))
        self._conn.commit()

    def query_runs(self, q: RunQuery) -> tuple:
        """Returns (runs, next_cursor); runs in ticked order, cursor is the
        last run_id of the page (run ids are time-ordered)."""
        clauses = ["sensor_id = ?"]
        params: list = [q.sensor_id]
        if q.since is not None:
            clauses.append("ticked_at >= ?")
            params.append(q.since)
        if q.until is not None:
            clauses.append("ticked_at <= ?")
            params.append(q.until)
        if q.outcome is not None:
            clauses.append("outcome = ?")
            params.append(q.outcome.value)
        if q.criterion_id is not None:
            clauses.append("run_id IN (SELECT run_id FROM run_results WHERE criterion_id = ?)")
            params.append(q.criterion_id)
        if q.cursor is not None:
            clauses.append("run_id > ?")
            params.append(q.cursor)
        sql = (
            "SELECT payload FROM runs WHERE "
            + " AND ".join(clauses)
            + " ORDER BY run_id LIMIT ?"
        )
        params.append(q.limit)
        rows = self._conn.execute(sql, params).fetchall()
        runs = [sensor_run_from_dict(json.loads(r[0])) for r in rows]
        next_cursor = runs[-1].run_id if len(runs) == q.limit else None
        return runs, next_cursor

    def get_run(self, run_id: str) -> Optional[SensorRun]:
        row = self._conn.execute(
            "SELECT payload FROM runs WHERE run_id = ?", (run_id,)
        ).fetchone()
        return sensor_run_from_dict(json.loads(row[0])) if row else None

    def count_runs(self, sensor_id: str) -> int:
        return self._conn.execute(
            "SELECT COUNT(*) FROM runs WHERE sensor_id = ?", (sensor_id,)
        ).fetchone()[0]

    # -- suggestions -------------------------------------------------------

    def put_suggestions(self, suggestions: Sequence[TestSuggestion]) -> None:
        with self._lock:
            self._conn.executemany(
                "INSERT INTO suggestions (criterion_id, payload) VALUES (?, ?)",
                [(s.criterion_id, canonical_json(s)) for s in suggestions],
            )
            self._conn.commit()

    def list_suggestions(self, criterion_id: str) -> list:
        rows = self._conn.execute(
            "SELECT payload FROM suggestions WHERE criterion_id = ? ORDER BY rowid",
            (criterion_id,),
        ).fetchall()
        return [test_suggestion_from_dict(json.loads(r[0])) for r in rows]
