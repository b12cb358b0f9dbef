"""Canonical event and episode-of-care document model.

Every other part of the platform works in terms of these types. Episodes are
persisted and exchanged as canonical JSON documents: keys sorted
lexicographically, no insignificant whitespace, money as fixed-point strings
with two fractional digits. Two equal episodes therefore serialize to
byte-identical documents.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from datetime import date, datetime, timezone
from decimal import Decimal, InvalidOperation
from typing import Any, Mapping, Optional, Sequence

EVENT_TYPES = (
    "ADMISSION",
    "DISCHARGE",
    "TRANSFER",
    "PROCEDURE",
    "DIAGNOSIS",
    "LAB_RESULT",
    "MEDICATION_ADMIN",
    "SEPSIS_FLAG",
    "DEATH",
    "BILLING_CHARGE",
    "COST_ENTRY",
    "APPOINTMENT",
)
FINANCIAL_EVENT_TYPES = frozenset({"BILLING_CHARGE", "COST_ENTRY"})
GENDERS = ("F", "M", "U")

SECONDS_PER_DAY = 86400.0
_MONEY_QUANTUM = Decimal("0.01")


class ValidationError(ValueError):
    """An object violates a model invariant; the message names it."""


class ParseError(ValueError):
    """Malformed document text; carries the byte position when known."""

    def __init__(self, message: str, position: Optional[int] = None):
        super().__init__(message)
        self.position = position


def money(value: Any) -> Decimal:
    """Coerce to a two-fractional-digit Decimal."""
    try:
        d = Decimal(str(value))
    except InvalidOperation as ex:
        raise ValidationError(f"not a decimal amount: {value!r}") from ex
    return d.quantize(_MONEY_QUANTUM)


def money_str(value: Decimal) -> str:
    return str(money(value))


def utc(year: int, month: int, day: int, hour: int = 0, minute: int = 0,
        second: int = 0) -> datetime:
    return datetime(year, month, day, hour, minute, second, tzinfo=timezone.utc)


def format_instant(dt: datetime) -> str:
    """Canonical RFC-3339 UTC form, second precision unless sub-second."""
    if dt.tzinfo is None:
        raise ValidationError("naive datetime; instants must be timezone-aware")
    dt = dt.astimezone(timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_instant(text: str) -> datetime:
    if not isinstance(text, str):
        raise ValidationError(f"instant must be a string, got {type(text).__name__}")
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(s)
    except ValueError as ex:
        raise ValidationError(f"unparseable instant {text!r}") from ex
    if dt.tzinfo is None:
        raise ValidationError(f"instant {text!r} has no timezone offset")
    return dt.astimezone(timezone.utc)


def canonical_json(obj: Any) -> str:
    """Lexicographic keys, compact separators; the platform's one JSON form."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def make_event_id(source_id: str, source_native_key: str) -> str:
    """Deterministic event identity from the source coordinates."""
    if not source_id:
        raise ValidationError("source_id must be non-empty")
    if not source_native_key:
        raise ValidationError("source_native_key must be non-empty")
    h = hashlib.sha256(f"{source_id}\x1f{source_native_key}".encode("utf-8"))
    return "ev-" + h.hexdigest()[:24]


def make_episode_id(patient_id: str, first_event_id: str) -> str:
    if not patient_id or not first_event_id:
        raise ValidationError("episode identity needs patient_id and first event_id")
    h = hashlib.sha256(f"{patient_id}\x1f{first_event_id}".encode("utf-8"))
    return "ep-" + h.hexdigest()[:24]


@dataclass(frozen=True)
class Event:
    event_id: str
    patient_id: str
    event_type: str
    timestamp: datetime
    source_id: str
    source_native_key: str
    encounter_id: Optional[str] = None
    department: Optional[str] = None
    attributes: Mapping[str, Any] = field(default_factory=dict)
    amount: Optional[Decimal] = None


def make_event(patient_id: str, event_type: str, timestamp: datetime,
               source_id: str, source_native_key: str,
               encounter_id: Optional[str] = None,
               department: Optional[str] = None,
               attributes: Optional[Mapping[str, Any]] = None,
               amount: Any = None) -> Event:
    """Build and validate an Event, deriving its id from the source key."""
    ev = Event(
        event_id=make_event_id(source_id, source_native_key),
        patient_id=patient_id,
        event_type=event_type,
        timestamp=timestamp,
        source_id=source_id,
        source_native_key=source_native_key,
        encounter_id=encounter_id or None,
        department=department or None,
        attributes=dict(attributes or {}),
        amount=money(amount) if amount is not None else None,
    )
    validate_event(ev)
    return ev


def validate_event(ev: Event) -> None:
    if ev.event_type not in EVENT_TYPES:
        raise ValidationError(f"unknown event_type {ev.event_type!r}")
    if not ev.patient_id:
        raise ValidationError("patient_id must be non-empty")
    if ev.timestamp.tzinfo is None:
        raise ValidationError("timestamp must be timezone-aware UTC")
    if ev.event_id != make_event_id(ev.source_id, ev.source_native_key):
        raise ValidationError("event_id is not derived from (source_id, source_native_key)")
    financial = ev.event_type in FINANCIAL_EVENT_TYPES
    if financial and ev.amount is None:
        raise ValidationError(f"{ev.event_type} events require an amount")
    if not financial and ev.amount is not None:
        raise ValidationError(f"{ev.event_type} events must not carry an amount")
    for k, v in ev.attributes.items():
        if not isinstance(k, str) or not isinstance(v, (str, int, float, bool)):
            raise ValidationError(f"attribute {k!r} must map string to scalar")


@dataclass(frozen=True)
class Patient:
    patient_id: str
    birth_date: date
    gender: str  # F | M | U

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise ValidationError(f"unknown gender {self.gender!r}")


@dataclass(frozen=True)
class Derived:
    length_of_stay_days: Optional[float]
    total_charges: Decimal
    total_costs: Decimal
    contribution_margin: Decimal
    died: bool


@dataclass(frozen=True)
class EpisodeOfCare:
    episode_id: str
    patient_id: str
    events: tuple
    admission_time: Optional[datetime] = None
    discharge_time: Optional[datetime] = None
    open: bool = True
    primary_department: Optional[str] = None
    derived: Optional[Derived] = None
    cohort_labels: tuple = ()


def event_sort_key(ev: Event):
    return (ev.timestamp, ev.event_id)


def derive_fields(e: EpisodeOfCare) -> EpisodeOfCare:
    """Recompute every field derivable from the event array. Idempotent."""
    events = tuple(e.events)
    if not events:
        raise ValidationError("episode must contain at least one event")
    adm = [ev.timestamp for ev in events if ev.event_type == "ADMISSION"]
    dis = [ev.timestamp for ev in events if ev.event_type == "DISCHARGE"]
    admission_time = min(adm) if adm else None
    discharge_time = max(dis) if dis else None
    is_open = discharge_time is None
    primary_department = None
    for ev in sorted(events, key=event_sort_key):
        if ev.department:
            primary_department = ev.department
            break
    los = None
    if admission_time is not None and discharge_time is not None:
        los = (discharge_time - admission_time).total_seconds() / SECONDS_PER_DAY
    charges = money(sum((ev.amount for ev in events if ev.event_type == "BILLING_CHARGE"),
                        Decimal(0)))
    costs = money(sum((ev.amount for ev in events if ev.event_type == "COST_ENTRY"),
                      Decimal(0)))
    derived = Derived(
        length_of_stay_days=los,
        total_charges=charges,
        total_costs=costs,
        contribution_margin=money(charges - costs),
        died=any(ev.event_type == "DEATH" for ev in events),
    )
    return replace(e, admission_time=admission_time, discharge_time=discharge_time,
                   open=is_open, primary_department=primary_department, derived=derived,
                   cohort_labels=tuple(sorted(set(e.cohort_labels))))


def validate_episode(e: EpisodeOfCare) -> None:
    if not e.episode_id:
        raise ValidationError("episode_id must be non-empty")
    if not e.events:
        raise ValidationError("episode must contain at least one event")
    keys = [event_sort_key(ev) for ev in e.events]
    if keys != sorted(keys):
        raise ValidationError("events must be sorted ascending by (timestamp, event_id)")
    ids = [ev.event_id for ev in e.events]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate event_id within episode")
    for ev in e.events:
        validate_event(ev)
        if ev.patient_id != e.patient_id:
            raise ValidationError("all events must share the episode's patient_id")
    expected = derive_fields(e)
    if (expected.admission_time, expected.discharge_time, expected.open,
            expected.primary_department, expected.derived) != (
            e.admission_time, e.discharge_time, e.open,
            e.primary_department, e.derived):
        raise ValidationError("derived fields are stale; run derive_fields")
    if e.open != (e.discharge_time is None):
        raise ValidationError("open flag must mirror absent discharge_time")


def _event_to_doc(ev: Event) -> dict:
    return {
        "event_id": ev.event_id,
        "patient_id": ev.patient_id,
        "encounter_id": ev.encounter_id,
        "event_type": ev.event_type,
        "timestamp": format_instant(ev.timestamp),
        "department": ev.department,
        "attributes": dict(ev.attributes),
        "amount": money_str(ev.amount) if ev.amount is not None else None,
        "source_id": ev.source_id,
        "source_native_key": ev.source_native_key,
    }


def _event_from_doc(d: Mapping[str, Any]) -> Event:
    if not isinstance(d, Mapping):
        raise ValidationError("event must be a JSON object")
    try:
        ev = Event(
            event_id=d["event_id"],
            patient_id=d["patient_id"],
            event_type=d["event_type"],
            timestamp=parse_instant(d["timestamp"]),
            source_id=d["source_id"],
            source_native_key=d["source_native_key"],
            encounter_id=d.get("encounter_id"),
            department=d.get("department"),
            attributes=dict(d.get("attributes") or {}),
            amount=money(d["amount"]) if d.get("amount") is not None else None,
        )
    except KeyError as ex:
        raise ValidationError(f"event document missing field {ex.args[0]!r}") from ex
    return ev


def episode_to_doc(e: EpisodeOfCare) -> dict:
    d = e.derived
    return {
        "episode_id": e.episode_id,
        "patient_id": e.patient_id,
        "admission_time": format_instant(e.admission_time) if e.admission_time else None,
        "discharge_time": format_instant(e.discharge_time) if e.discharge_time else None,
        "open": e.open,
        "primary_department": e.primary_department,
        "cohort_labels": sorted(e.cohort_labels),
        "events": [_event_to_doc(ev) for ev in e.events],
        "derived": {
            "length_of_stay_days": d.length_of_stay_days,
            "total_charges": money_str(d.total_charges),
            "total_costs": money_str(d.total_costs),
            "contribution_margin": money_str(d.contribution_margin),
            "died": d.died,
        },
    }


def serialize_episode(e: EpisodeOfCare) -> str:
    validate_episode(e)
    return canonical_json(episode_to_doc(e))


def deserialize_episode(text: str) -> EpisodeOfCare:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as ex:
        raise ParseError(f"malformed episode document: {ex.msg}", position=ex.pos) from ex
    return episode_from_doc(doc)


def episode_from_doc(doc: Mapping[str, Any]) -> EpisodeOfCare:
    if not isinstance(doc, Mapping):
        raise ValidationError("episode document must be a JSON object")
    try:
        der = doc["derived"]
        e = EpisodeOfCare(
            episode_id=doc["episode_id"],
            patient_id=doc["patient_id"],
            events=tuple(_event_from_doc(d) for d in doc["events"]),
            admission_time=parse_instant(doc["admission_time"]) if doc.get("admission_time") else None,
            discharge_time=parse_instant(doc["discharge_time"]) if doc.get("discharge_time") else None,
            open=bool(doc["open"]),
            primary_department=doc.get("primary_department"),
            derived=Derived(
                length_of_stay_days=der["length_of_stay_days"],
                total_charges=money(der["total_charges"]),
                total_costs=money(der["total_costs"]),
                contribution_margin=money(der["contribution_margin"]),
                died=bool(der["died"]),
            ),
            cohort_labels=tuple(doc.get("cohort_labels") or ()),
        )
    except KeyError as ex:
        raise ValidationError(f"episode document missing field {ex.args[0]!r}") from ex
    validate_episode(e)
    return e


def patient_to_doc(p: Patient) -> dict:
    return {"patient_id": p.patient_id, "birth_date": p.birth_date.isoformat(),
            "gender": p.gender}


def patient_from_doc(d: Mapping[str, Any]) -> Patient:
    return Patient(patient_id=d["patient_id"],
                   birth_date=date.fromisoformat(d["birth_date"]),
                   gender=d["gender"])
