"""Embedded single-node episode-of-care repository.

Durable document store backed by an append-only write-ahead log for events
plus canonical per-episode snapshot documents. Layout under the root
directory:

    events.log            framed JSON batches, file starts with b"EOC1"
    episodes/<id>.json    canonical episode documents (one per episode)
    meta/watermarks.json  per-source high-water timestamps
    meta/patients.json    patient demographics
    meta/dirty.json       patients whose events changed since the last build
    meta/cohorts.json     cohort definitions and materialized assignments
    meta/tracked.json     tracked KPI items

Single writer, any number of readers. Event batches are written as one log
frame (4-byte big-endian length prefix + JSON payload); a torn tail frame is
discarded on open, so a crashed batch is either fully visible or not at all.
"""
from __future__ import annotations

import json
import os
import struct
import threading
from dataclasses import dataclass, field
from datetime import datetime
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from . import filterlang
from .model import (
    Event, EpisodeOfCare, Patient, ValidationError,
    canonical_json, episode_from_doc, format_instant, parse_instant,
    patient_from_doc, patient_to_doc, serialize_episode, validate_event,
    _event_from_doc, _event_to_doc, event_sort_key,
)

MAGIC = b"EOC1"


class RepositoryError(RuntimeError):
    pass


class QueryError(ValueError):
    pass


@dataclass(frozen=True)
class Watermark:
    source_id: str
    high_water: Optional[datetime] = None


@dataclass
class EpisodeFilterQuery:
    time_from: datetime
    time_to: datetime
    filter_ast: Optional[filterlang.FilterAst] = None
    cohort_id: Optional[str] = None

    def __post_init__(self):
        if self.time_from >= self.time_to:
            raise QueryError("query window requires from < to")


def _write_atomic(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def _write_json_if_changed(path: str, obj) -> None:
    data = canonical_json(obj).encode("utf-8")
    if os.path.exists(path):
        with open(path, "rb") as f:
            if f.read() == data:
                return
    _write_atomic(path, data)


class Repository:
    """Handle on a repository root. Use Repository.open()."""

    _rw_roots: Set[str] = set()
    _registry_lock = threading.Lock()

    def __init__(self, root: str, mode: str):
        self.root = os.path.realpath(root)
        self.mode = mode
        self._lock = threading.RLock()
        self._closed = False
        self._events: Dict[str, Event] = {}
        self._by_patient: Dict[str, Set[str]] = {}
        self._episodes: Dict[str, bytes] = {}          # episode_id -> canonical doc bytes
        self._episode_objs: Dict[str, EpisodeOfCare] = {}
        self._patients: Dict[str, Patient] = {}
        self._watermarks: Dict[str, Optional[datetime]] = {}
        self._dirty: Set[str] = set()
        self._cohorts: dict = {"defs": {}, "assignments": {}}
        self._tracked: List[dict] = []
        # test hook: called with the log file object just before a frame is
        # fully written; may write a partial frame and raise to simulate a crash
        self._crash_hook = None

    # -- lifecycle ---------------------------------------------------------

    @classmethod
    def open(cls, root: str, mode: str = "rw") -> "Repository":
        if mode not in ("rw", "ro"):
            raise RepositoryError(f"unknown mode {mode!r}")
        repo = cls(root, mode)
        if mode == "rw":
            os.makedirs(os.path.join(repo.root, "episodes"), exist_ok=True)
            os.makedirs(os.path.join(repo.root, "meta"), exist_ok=True)
            with cls._registry_lock:
                if repo.root in cls._rw_roots:
                    raise RepositoryError(
                        f"another read-write handle is open on {repo.root}")
                cls._rw_roots.add(repo.root)
        repo._load()
        return repo

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self.mode == "rw":
            with self._registry_lock:
                self._rw_roots.discard(self.root)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _require_rw(self):
        if self.mode != "rw":
            raise RepositoryError("operation requires a read-write handle")
        if self._closed:
            raise RepositoryError("repository handle is closed")

    # -- persistence -------------------------------------------------------

    def _path(self, *parts) -> str:
        return os.path.join(self.root, *parts)

    def _load(self) -> None:
        self._replay_log()
        epdir = self._path("episodes")
        if os.path.isdir(epdir):
            for name in sorted(os.listdir(epdir)):
                if not name.endswith(".json"):
                    continue
                with open(os.path.join(epdir, name), "rb") as f:
                    data = f.read()
                ep = episode_from_doc(json.loads(data.decode("utf-8")))
                self._episodes[ep.episode_id] = data
                self._episode_objs[ep.episode_id] = ep
        self._watermarks = {}
        wm = self._read_meta("watermarks.json", {})
        for sid, ts in wm.items():
            self._watermarks[sid] = parse_instant(ts) if ts else None
        self._patients = {d["patient_id"]: patient_from_doc(d)
                          for d in self._read_meta("patients.json", [])}
        self._dirty = set(self._read_meta("dirty.json", []))
        self._cohorts = self._read_meta("cohorts.json", {"defs": {}, "assignments": {}})
        self._tracked = self._read_meta("tracked.json", [])

    def _read_meta(self, name: str, default):
        path = self._path("meta", name)
        if not os.path.exists(path):
            return default
        with open(path, "rb") as f:
            return json.loads(f.read().decode("utf-8"))

    def _replay_log(self) -> None:
        log = self._path("events.log")
        if not os.path.exists(log):
            return
        good_end = len(MAGIC)
        with open(log, "rb") as f:
            if f.read(len(MAGIC)) != MAGIC:
                raise RepositoryError("events.log has an unknown format header")
            while True:
                header = f.read(4)
                if len(header) < 4:
                    break
                (n,) = struct.unpack(">I", header)
                payload = f.read(n)
                if len(payload) < n:
                    break
                try:
                    frame = json.loads(payload.decode("utf-8"))
                    events = [_event_from_doc(d) for d in frame["events"]]
                except (ValueError, KeyError, ValidationError):
                    break
                for ev in events:
                    self._index_event(ev)
                good_end = f.tell()
        if self.mode == "rw" and os.path.getsize(log) != good_end:
            # drop the torn tail frame
            with open(log, "r+b") as f:
                f.truncate(good_end)

    def _index_event(self, ev: Event) -> None:
        self._events[ev.event_id] = ev
        self._by_patient.setdefault(ev.patient_id, set()).add(ev.event_id)

    def _append_frame(self, events: Sequence[Event]) -> None:
        log = self._path("events.log")
        payload = canonical_json({"events": [_event_to_doc(ev) for ev in events]}
                                 ).encode("utf-8")
        frame = struct.pack(">I", len(payload)) + payload
        new_file = not os.path.exists(log)
        with open(log, "ab") as f:
            if new_file:
                f.write(MAGIC)
            if self._crash_hook is not None:
                self._crash_hook(f, frame)
            f.write(frame)
            f.flush()
            os.fsync(f.fileno())

    def _persist_dirty(self) -> None:
        _write_json_if_changed(self._path("meta", "dirty.json"), sorted(self._dirty))

    # -- events ------------------------------------------------------------

    def upsert_events(self, events: Iterable[Event]) -> int:
        """Store events by id; returns the count of newly stored ids."""
        self._require_rw()
        batch: List[Event] = []
        in_batch: Dict[str, int] = {}
        new_count = 0
        touched: Set[str] = set()
        for ev in events:
            validate_event(ev)
            prior = self._events.get(ev.event_id)
            if ev.event_id in in_batch:
                # duplicate id inside one batch: keep only the last version
                if batch[in_batch[ev.event_id]] != ev:
                    touched.add(batch[in_batch[ev.event_id]].patient_id)
                    batch[in_batch[ev.event_id]] = ev
                    touched.add(ev.patient_id)
                continue
            if prior is None:
                new_count += 1
            elif prior == ev:
                continue
            else:
                touched.add(prior.patient_id)
            in_batch[ev.event_id] = len(batch)
            batch.append(ev)
            touched.add(ev.patient_id)
        if not batch:
            return 0
        with self._lock:
            self._append_frame(batch)
            for ev in batch:
                self._index_event(ev)
            self._dirty |= touched
            self._persist_dirty()
        return new_count

    def scan_events(self, patient_id: str) -> List[Event]:
        with self._lock:
            ids = self._by_patient.get(patient_id, set())
            evs = [self._events[i] for i in ids]
        return sorted(evs, key=event_sort_key)

    def all_patient_ids(self) -> List[str]:
        with self._lock:
            return sorted(self._by_patient)

    def dirty_patients(self) -> Set[str]:
        with self._lock:
            return set(self._dirty)

    def clear_dirty(self, patient_ids: Iterable[str]) -> None:
        self._require_rw()
        with self._lock:
            self._dirty -= set(patient_ids)
            self._persist_dirty()

    def compact(self) -> None:
        """Rewrite the event log as a single frame of the live event set."""
        self._require_rw()
        with self._lock:
            events = sorted(self._events.values(), key=event_sort_key)
            payload = canonical_json({"events": [_event_to_doc(ev) for ev in events]}
                                     ).encode("utf-8")
            data = MAGIC + struct.pack(">I", len(payload)) + payload
            _write_atomic(self._path("events.log"), data)

    # -- patients ----------------------------------------------------------

    def upsert_patients(self, patients: Iterable[Patient]) -> None:
        self._require_rw()
        with self._lock:
            for p in patients:
                self._patients[p.patient_id] = p
            docs = [patient_to_doc(self._patients[k]) for k in sorted(self._patients)]
            _write_json_if_changed(self._path("meta", "patients.json"), docs)

    def get_patient(self, patient_id: str) -> Optional[Patient]:
        with self._lock:
            return self._patients.get(patient_id)

    def patients(self) -> Dict[str, Patient]:
        with self._lock:
            return dict(self._patients)

    # -- episodes ----------------------------------------------------------

    def put_episodes(self, episodes: Sequence[EpisodeOfCare],
                     tombstones: Iterable[str] = ()) -> int:
        """Store canonical documents; tombstoned ids are removed."""
        self._require_rw()
        count = 0
        with self._lock:
            for eid in tombstones:
                if eid in self._episodes:
                    self._episodes.pop(eid)
                    self._episode_objs.pop(eid, None)
                    path = self._path("episodes", f"{eid}.json")
                    if os.path.exists(path):
                        os.remove(path)
            for ep in episodes:
                data = serialize_episode(ep).encode("utf-8")
                if self._episodes.get(ep.episode_id) == data:
                    continue
                _write_atomic(self._path("episodes", f"{ep.episode_id}.json"), data)
                self._episodes[ep.episode_id] = data
                self._episode_objs[ep.episode_id] = ep
                count += 1
        return count

    def get_episode(self, episode_id: str) -> Optional[EpisodeOfCare]:
        with self._lock:
            return self._episode_objs.get(episode_id)

    def list_episodes(self) -> List[EpisodeOfCare]:
        with self._lock:
            eps = list(self._episode_objs.values())
        return sorted(eps, key=lambda e: (e.admission_time is None,
                                          e.admission_time or datetime.min,
                                          e.episode_id))

    def episode_ids(self) -> Set[str]:
        with self._lock:
            return set(self._episodes)

    def episode_document(self, episode_id: str) -> Optional[bytes]:
        with self._lock:
            return self._episodes.get(episode_id)

    def query_episodes(self, q: EpisodeFilterQuery) -> List[EpisodeOfCare]:
        members = None
        if q.cohort_id is not None:
            assignment = self._cohorts.get("assignments", {}).get(q.cohort_id)
            if assignment is None:
                raise QueryError(f"unknown or unmaterialized cohort {q.cohort_id!r}")
            members = set(assignment["members"])
        out = []
        for ep in self.list_episodes():
            if ep.admission_time is None:
                continue
            if not (q.time_from <= ep.admission_time < q.time_to):
                continue
            if members is not None and ep.episode_id not in members:
                continue
            if q.filter_ast is not None:
                patient = self.get_patient(ep.patient_id)
                if not filterlang.evaluate(q.filter_ast, ep, patient):
                    continue
            out.append(ep)
        return sorted(out, key=lambda e: (e.admission_time, e.episode_id))

    # -- watermarks ----------------------------------------------------------

    def watermark_get(self, source_id: str) -> Watermark:
        with self._lock:
            return Watermark(source_id, self._watermarks.get(source_id))

    def watermark_set(self, w: Watermark) -> None:
        self._require_rw()
        with self._lock:
            prior = self._watermarks.get(w.source_id)
            if prior is not None and (w.high_water is None or w.high_water < prior):
                raise RepositoryError(
                    f"watermark for {w.source_id!r} may not move backwards")
            self._watermarks[w.source_id] = w.high_water
            doc = {sid: (format_instant(ts) if ts else None)
                   for sid, ts in self._watermarks.items()}
            _write_json_if_changed(self._path("meta", "watermarks.json"), doc)

    # -- cohorts and tracked items -------------------------------------------

    def cohort_defs(self) -> dict:
        with self._lock:
            return dict(self._cohorts.get("defs", {}))

    def cohort_assignment(self, cohort_id: str) -> Optional[dict]:
        with self._lock:
            a = self._cohorts.get("assignments", {}).get(cohort_id)
            return dict(a) if a is not None else None

    def put_cohort_def(self, cohort_id: str, doc: dict) -> None:
        self._require_rw()
        with self._lock:
            self._cohorts.setdefault("defs", {})[cohort_id] = doc
            self._persist_cohorts()

    def put_cohort_assignment(self, cohort_id: str, assignment: dict) -> None:
        self._require_rw()
        with self._lock:
            self._cohorts.setdefault("assignments", {})[cohort_id] = assignment
            self._persist_cohorts()

    def _persist_cohorts(self) -> None:
        _write_json_if_changed(self._path("meta", "cohorts.json"), self._cohorts)

    def tracked_items(self) -> List[dict]:
        with self._lock:
            return list(self._tracked)

    def put_tracked_items(self, items: List[dict]) -> None:
        self._require_rw()
        with self._lock:
            self._tracked = list(items)
            _write_json_if_changed(self._path("meta", "tracked.json"), self._tracked)
