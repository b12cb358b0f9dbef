"""Source connectors: read heterogeneous files, normalize to canonical events,
and load them incrementally past per-source watermarks.

Three mapping profiles ship with the platform, one per source family. Each
source keeps its native field vocabulary and date format; normalization maps
them onto the canonical event model:

  adt_ptbr     CSV, Portuguese-style headers, dates as DD/MM/YYYY HH:MM
  billing_v1   JSONL, epoch-second timestamps, money as decimal strings
  clinical_v1  JSONL, RFC-3339 timestamps

A load reads only records with source_timestamp strictly greater than the
source's watermark, upserts them, relinks affected patients, and only then
advances the watermark, so a failed load is retried in full on the next run
and idempotent upserts keep the outcome exactly-once. Rejected rows are
quarantined to rejects-<source_id>.jsonl under the repository root.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Tuple

from .builder import LinkagePolicy, apply_increment
from .model import Event, Patient, ValidationError, make_event, money, parse_instant
from .repository import Repository, Watermark

ADT_EVENT_TYPES = {
    "ADMISSAO": "ADMISSION",
    "ALTA": "DISCHARGE",
    "TRANSFERENCIA": "TRANSFER",
    "OBITO": "DEATH",
}
BILLING_EVENT_TYPES = {"cobranca": "BILLING_CHARGE", "custo": "COST_ENTRY"}
CLINICAL_EVENT_TYPES = {
    "procedure": "PROCEDURE",
    "diagnosis": "DIAGNOSIS",
    "lab_result": "LAB_RESULT",
    "sepsis_flag": "SEPSIS_FLAG",
    "medication_admin": "MEDICATION_ADMIN",
    "appointment": "APPOINTMENT",
}


class SourceError(RuntimeError):
    pass


class RejectError(ValueError):
    """A single record cannot be normalized; the stream continues."""


@dataclass(frozen=True)
class SourceConfig:
    source_id: str
    path: str
    format: str  # CSV | JSONL
    mapping_profile: str
    kind: str  # ADT | BILLING | CLINICAL

    def __post_init__(self):
        if self.format not in ("CSV", "JSONL"):
            raise ValidationError(f"unknown source format {self.format!r}")
        if self.mapping_profile not in PROFILES:
            raise ValidationError(f"unknown mapping profile {self.mapping_profile!r}")


@dataclass(frozen=True)
class SourceRecord:
    source_id: str
    native_key: str
    raw: Dict[str, str]
    source_timestamp: datetime


@dataclass
class SourceCounts:
    read: int = 0
    normalized: int = 0
    rejected: int = 0
    upserted: int = 0


@dataclass
class IngestReport:
    sources: Dict[str, SourceCounts] = field(default_factory=dict)
    watermarks: Dict[str, Optional[str]] = field(default_factory=dict)
    rejections: List[dict] = field(default_factory=list)
    errors: Dict[str, str] = field(default_factory=dict)

    @property
    def total_upserted(self) -> int:
        return sum(c.upserted for c in self.sources.values())

    def to_doc(self) -> dict:
        doc = {
            "sources": {sid: vars(c) for sid, c in sorted(self.sources.items())},
            "watermarks": dict(sorted(self.watermarks.items())),
            "rejections": self.rejections,
        }
        if self.errors:
            doc["errors"] = dict(sorted(self.errors.items()))
        return doc


def _parse_adt_instant(text: str) -> datetime:
    try:
        return datetime.strptime(text.strip(), "%d/%m/%Y %H:%M").replace(
            tzinfo=timezone.utc)
    except ValueError as ex:
        raise RejectError(f"unparseable DD/MM/YYYY HH:MM date {text!r}") from ex


def _require(raw: Dict[str, str], name: str) -> str:
    v = raw.get(name)
    if v is None or str(v).strip() == "":
        raise RejectError(f"missing required field {name!r}")
    return str(v).strip()


class _AdtProfile:
    key_field = "id"

    def record_timestamp(self, raw):
        return _parse_adt_instant(_require(raw, "data"))

    def normalize(self, rec: SourceRecord) -> Event:
        raw = rec.raw
        tipo = _require(raw, "tipo")
        etype = ADT_EVENT_TYPES.get(tipo.upper())
        if etype is None:
            raise RejectError(f"unknown ADT record type {tipo!r}")
        return make_event(
            patient_id=_require(raw, "paciente"),
            event_type=etype,
            timestamp=_parse_adt_instant(_require(raw, "data")),
            source_id=rec.source_id,
            source_native_key=rec.native_key,
            encounter_id=(raw.get("atendimento") or "").strip() or None,
            department=(raw.get("setor") or "").strip() or None,
        )

    def extract_patient(self, rec: SourceRecord) -> Optional[Patient]:
        raw = rec.raw
        nascimento = (raw.get("nascimento") or "").strip()
        sexo = (raw.get("sexo") or "").strip().upper()
        if not nascimento or sexo not in ("F", "M", "U"):
            return None
        try:
            birth = datetime.strptime(nascimento, "%d/%m/%Y").date()
        except ValueError:
            return None
        return Patient(patient_id=_require(raw, "paciente"), birth_date=birth,
                       gender=sexo)


class _BillingProfile:
    key_field = "chave"

    def record_timestamp(self, raw):
        v = _require(raw, "ts")
        try:
            return datetime.fromtimestamp(int(v), tz=timezone.utc)
        except (ValueError, OverflowError, OSError) as ex:
            raise RejectError(f"unparseable epoch-second timestamp {v!r}") from ex

    def normalize(self, rec: SourceRecord) -> Event:
        raw = rec.raw
        tipo = _require(raw, "tipo")
        etype = BILLING_EVENT_TYPES.get(tipo.lower())
        if etype is None:
            raise RejectError(f"unknown billing record type {tipo!r}")
        try:
            amount = money(_require(raw, "valor"))
        except (ValidationError, ValueError) as ex:
            raise RejectError(f"unparseable amount {raw.get('valor')!r}") from ex
        attributes = {}
        if raw.get("descricao"):
            attributes["description"] = str(raw["descricao"])
        return make_event(
            patient_id=_require(raw, "paciente"),
            event_type=etype,
            timestamp=self.record_timestamp(raw),
            source_id=rec.source_id,
            source_native_key=rec.native_key,
            encounter_id=(str(raw.get("atendimento") or "")).strip() or None,
            attributes=attributes,
            amount=amount,
        )

    def extract_patient(self, rec):
        return None


class _ClinicalProfile:
    key_field = "record_id"

    def record_timestamp(self, raw):
        try:
            return parse_instant(_require(raw, "time"))
        except ValidationError as ex:
            raise RejectError(str(ex)) from ex

    def normalize(self, rec: SourceRecord) -> Event:
        raw = rec.raw
        kind = _require(raw, "event_kind")
        etype = CLINICAL_EVENT_TYPES.get(kind.lower())
        if etype is None:
            raise RejectError(f"unknown clinical record kind {kind!r}")
        attributes = {}
        for key in ("code", "name", "class", "value"):
            v = raw.get(key)
            if v is not None and v != "":
                attributes[key] = v
        return make_event(
            patient_id=_require(raw, "patient_id"),
            event_type=etype,
            timestamp=self.record_timestamp(raw),
            source_id=rec.source_id,
            source_native_key=rec.native_key,
            encounter_id=(str(raw.get("encounter_id") or "")).strip() or None,
            department=(str(raw.get("department") or "")).strip() or None,
            attributes=attributes,
        )

    def extract_patient(self, rec):
        return None


PROFILES = {
    "adt_ptbr": _AdtProfile(),
    "billing_v1": _BillingProfile(),
    "clinical_v1": _ClinicalProfile(),
}


def _iter_rows(cfg: SourceConfig):
    """Yield (row_number, raw dict or RejectError)."""
    if not os.path.exists(cfg.path):
        raise SourceError(f"source file not found: {cfg.path}")
    if cfg.format == "CSV":
        with open(cfg.path, newline="", encoding="utf-8") as f:
            for i, row in enumerate(csv.DictReader(f)):
                yield i, {k: v for k, v in row.items() if k is not None}
    else:
        with open(cfg.path, encoding="utf-8") as f:
            for i, line in enumerate(f):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    if not isinstance(obj, dict):
                        raise ValueError("not a JSON object")
                    yield i, obj
                except ValueError as ex:
                    yield i, RejectError(f"malformed JSON line: {ex}")


def read_source(cfg: SourceConfig,
                since: Watermark) -> Tuple[List[SourceRecord], List[dict]]:
    """Records strictly past the watermark, ordered by source timestamp,
    plus the rejects encountered while reading."""
    profile = PROFILES[cfg.mapping_profile]
    records: List[SourceRecord] = []
    rejects: List[dict] = []
    for i, row in _iter_rows(cfg):
        if isinstance(row, RejectError):
            rejects.append({"source_id": cfg.source_id, "row": i, "reason": str(row)})
            continue
        try:
            key = _require(row, profile.key_field)
            ts = profile.record_timestamp(row)
        except RejectError as ex:
            rejects.append({"source_id": cfg.source_id, "row": i, "reason": str(ex),
                            "raw": row})
            continue
        if since.high_water is not None and ts <= since.high_water:
            continue
        records.append(SourceRecord(cfg.source_id, key, row, ts))
    records.sort(key=lambda r: (r.source_timestamp, r.native_key))
    return records, rejects


def normalize(rec: SourceRecord, profile_name: str) -> Event:
    """Map a raw source record onto a canonical Event. Never partial: any
    missing field or bad value raises RejectError."""
    profile = PROFILES[profile_name]
    try:
        return profile.normalize(rec)
    except RejectError:
        raise
    except ValidationError as ex:
        raise RejectError(str(ex)) from ex


def _write_quarantine(repo: Repository, source_id: str, rejects: List[dict]) -> None:
    path = os.path.join(repo.root, f"rejects-{source_id}.jsonl")
    if not rejects:
        if os.path.exists(path):
            os.remove(path)
        return
    data = "".join(json.dumps(r, sort_keys=True) + "\n" for r in rejects)
    with open(path, "w", encoding="utf-8") as f:
        f.write(data)


def load_increment(cfgs: List[SourceConfig], repo: Repository,
                   policy: LinkagePolicy = LinkagePolicy(),
                   full: bool = False) -> IngestReport:
    """Incrementally load each source and relink affected patients.

    With full=True the watermark is ignored (all records re-read); idempotent
    upserts make this safe.
    """
    report = IngestReport()
    for cfg in cfgs:
        try:
            _load_one(cfg, repo, policy, full, report)
        except (SourceError, OSError) as ex:
            # the failing source keeps its old watermark; others proceed
            report.errors[cfg.source_id] = str(ex)
            final = repo.watermark_get(cfg.source_id).high_water
            report.watermarks[cfg.source_id] = (
                final.strftime("%Y-%m-%dT%H:%M:%SZ") if final else None)
    return report


def _load_one(cfg: SourceConfig, repo: Repository, policy: LinkagePolicy,
              full: bool, report: IngestReport) -> None:
    wm = repo.watermark_get(cfg.source_id)
    since = Watermark(cfg.source_id) if full else wm
    profile = PROFILES[cfg.mapping_profile]
    records, read_rejects = read_source(cfg, since)
    events: List[Event] = []
    patients: List[Patient] = []
    norm_rejects: List[dict] = []
    good_ts = []
    for rec in records:
        try:
            events.append(normalize(rec, cfg.mapping_profile))
        except RejectError as ex:
            norm_rejects.append({"source_id": cfg.source_id,
                                 "native_key": rec.native_key,
                                 "reason": str(ex), "raw": rec.raw})
            continue
        good_ts.append(rec.source_timestamp)
        p = profile.extract_patient(rec)
        if p is not None:
            patients.append(p)
    upserted = repo.upsert_events(events)
    if patients:
        repo.upsert_patients(patients)
    apply_increment(repo, policy)
    new_high = max(good_ts) if good_ts else None
    if new_high is not None and (wm.high_water is None or new_high > wm.high_water):
        repo.watermark_set(Watermark(cfg.source_id, new_high))
    rejects = read_rejects + norm_rejects
    _write_quarantine(repo, cfg.source_id, rejects)
    report.sources[cfg.source_id] = SourceCounts(
        read=len(records) + len(read_rejects),
        normalized=len(events),
        rejected=len(rejects),
        upserted=upserted)
    final = repo.watermark_get(cfg.source_id).high_water
    report.watermarks[cfg.source_id] = (
        final.strftime("%Y-%m-%dT%H:%M:%SZ") if final else None)
    report.rejections.extend(rejects)
