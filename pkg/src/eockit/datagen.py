"""Deterministic synthetic hospital generator with built-in ground truth.

Emits the three heterogeneous source files the extractor ingests:

  adt.csv         admissions/discharges/transfers/deaths, Portuguese-style
                  headers, DD/MM/YYYY HH:MM dates
  billing.jsonl   charges and costs, epoch-second timestamps
  clinical.jsonl  procedures/diagnoses/labs/sepsis flags/med administrations/
                  appointments, RFC-3339 timestamps

plus ground_truth.json holding the exact episode partition and expected KPI
aggregates. Ground truth is computed here, during generation, from the
generator's own structures: it never goes through the extraction or linkage
pipeline, so pipeline tests compare against an independent source of truth.

Events are placed so the default linkage policy (72 h grace window, 24 h
session gap) recovers the generated partition: unkeyed clinical events stay
strictly inside their episode's admission-to-discharge+grace span, outpatient
sessions sit well clear of every inpatient span, and consecutive admissions
are separated by more than grace plus a margin.
"""
from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field, asdict
from datetime import date, datetime, timedelta, timezone
from decimal import Decimal
from typing import Dict, List, Optional, Tuple

GRACE_HOURS = 72
SESSION_GAP_HOURS = 24

KPI_TYPES = (
    "OCCUPANCY_RATE", "AVG_LOS", "MORTALITY_RATE", "READMISSION_30D",
    "CONTRIBUTION_MARGIN", "SEPSIS_DOOR_TO_ANTIBIOTIC", "ADMISSION_COUNT",
    "REVENUE", "COSTS",
)
GROUP_SUBSETS = (
    (), ("gender",), ("age_band",), ("department",),
    ("gender", "age_band"), ("gender", "department"),
    ("age_band", "department"), ("gender", "age_band", "department"),
)

DEFAULT_DEPARTMENTS = ("cardiology", "oncology", "orthopedics", "emergency",
                       "pediatrics")
PROCEDURES = (("stent", "stent"), ("cabg", "coronary artery bypass"),
              ("appendectomy", "appendectomy"), ("hipr", "hip replacement"),
              ("chemo", "chemotherapy session"))
DIAGNOSES = (("I21", "acute myocardial infarction"), ("C50", "breast neoplasm"),
             ("S72", "femur fracture"), ("J18", "pneumonia"),
             ("A41", "sepsis"))
LABS = ("hemogram", "troponin", "creatinine", "crp", "glucose")


class DatagenError(ValueError):
    pass


@dataclass(frozen=True)
class GenSpec:
    seed: int
    n_patients: int
    days: int
    start_date: date = date(2015, 3, 1)
    departments: tuple = DEFAULT_DEPARTMENTS
    sepsis_rate: float = 0.15
    mortality_rate: float = 0.08
    readmission_rate: float = 0.12
    bed_capacity: int = 50

    def __post_init__(self):
        if self.n_patients < 1 or self.days < 1:
            raise DatagenError("n_patients and days must be >= 1")
        for r in (self.sepsis_rate, self.mortality_rate, self.readmission_rate):
            if not 0.0 <= r <= 1.0:
                raise DatagenError("rates must lie in [0, 1]")


def _fmt_rfc3339(dt: datetime) -> str:
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def _fmt_adt(dt: datetime) -> str:
    return dt.strftime("%d/%m/%Y %H:%M")


@dataclass
class _Episode:
    patient_id: str
    kind: str                       # inpatient | outpatient
    department: str
    admission: Optional[datetime] = None
    discharge: Optional[datetime] = None
    died: bool = False
    event_keys: List[str] = field(default_factory=list)
    charges: List[Tuple[datetime, Decimal]] = field(default_factory=list)
    costs: List[Tuple[datetime, Decimal]] = field(default_factory=list)
    admission_times: List[datetime] = field(default_factory=list)
    sepsis_flag: Optional[datetime] = None
    sepsis_minutes: Optional[float] = None
    first_event: Optional[datetime] = None

    @property
    def los_days(self) -> Optional[float]:
        if self.admission is None or self.discharge is None:
            return None
        return (self.discharge - self.admission).total_seconds() / 86400.0


class _Emitter:
    def __init__(self):
        self.adt_rows: List[dict] = []
        self.billing_rows: List[dict] = []
        self.clinical_rows: List[dict] = []
        self._seq = {"adt": 0, "bil": 0, "cli": 0}

    def _key(self, prefix: str) -> str:
        self._seq[prefix] += 1
        return f"{prefix}-{self._seq[prefix]:06d}"

    def adt(self, ep: _Episode, patient: dict, tipo: str, ts: datetime,
            setor: str, encounter: str) -> None:
        key = self._key("adt")
        self.adt_rows.append({
            "id": key, "paciente": ep.patient_id, "atendimento": encounter,
            "tipo": tipo, "data": _fmt_adt(ts), "setor": setor,
            "nascimento": datetime.strptime(patient["birth_date"], "%Y-%m-%d")
                .strftime("%d/%m/%Y"),
            "sexo": patient["gender"], "_ts": ts,
        })
        ep.event_keys.append(f"adt:{key}")

    def billing(self, ep: _Episode, tipo: str, ts: datetime, amount: Decimal,
                encounter: str, desc: str) -> None:
        key = self._key("bil")
        self.billing_rows.append({
            "chave": key, "paciente": ep.patient_id, "atendimento": encounter,
            "tipo": tipo, "valor": f"{amount:.2f}",
            "ts": int(ts.timestamp()), "descricao": desc, "_ts": ts,
        })
        ep.event_keys.append(f"billing:{key}")

    def clinical(self, ep: _Episode, kind: str, ts: datetime,
                 department: Optional[str] = None, code: Optional[str] = None,
                 name: Optional[str] = None, med_class: Optional[str] = None,
                 value: Optional[str] = None,
                 encounter: Optional[str] = None) -> None:
        key = self._key("cli")
        row = {"record_id": key, "patient_id": ep.patient_id,
               "event_kind": kind, "time": _fmt_rfc3339(ts), "_ts": ts}
        if encounter:
            row["encounter_id"] = encounter
        if department:
            row["department"] = department
        if code:
            row["code"] = code
        if name:
            row["name"] = name
        if med_class:
            row["class"] = med_class
        if value:
            row["value"] = value
        self.clinical_rows.append(row)
        ep.event_keys.append(f"clinical:{key}")


def _minutes(rng: random.Random, lo: float, hi: float) -> timedelta:
    return timedelta(minutes=int(rng.uniform(lo, hi)))


def _gen_patient_episodes(rng: random.Random, spec: GenSpec, pid: str,
                          patient: dict, em: _Emitter) -> List[_Episode]:
    start = datetime.combine(spec.start_date, datetime.min.time(), timezone.utc)
    horizon_end = start + timedelta(days=spec.days)
    episodes: List[_Episode] = []
    enc_seq = 0

    # inpatient chain
    adm = start + _minutes(rng, 0, max(1.0, spec.days * 1440 * 0.6))
    while True:
        remaining_min = (horizon_end - adm).total_seconds() / 60.0 - 15
        if remaining_min < 75:
            break
        los_min = int(rng.uniform(60, min(14 * 1440, remaining_min)))
        disch = adm + timedelta(minutes=los_min)
        dept = rng.choice(list(spec.departments))
        enc_seq += 1
        enc = f"ENC-{pid}-{enc_seq}"
        ep = _Episode(patient_id=pid, kind="inpatient", department=dept,
                      admission=adm, discharge=disch)
        ep.admission_times.append(adm)
        em.adt(ep, patient, "ADMISSAO", adm, dept, enc)

        if los_min >= 240 and rng.random() < 0.2:
            t = adm + _minutes(rng, 60, los_min - 60)
            em.adt(ep, patient, "TRANSFERENCIA", t,
                   rng.choice(list(spec.departments)), enc)

        n_proc = rng.randint(0, 2) if los_min >= 120 else 0
        for _ in range(n_proc):
            if dept == "cardiology" and rng.random() < 0.5:
                code, name = PROCEDURES[0]  # stent
            else:
                code, name = rng.choice(PROCEDURES)
            ts = adm + _minutes(rng, 10, los_min - 10)
            em.clinical(ep, "procedure", ts, department=dept, code=code, name=name)
        for _ in range(rng.randint(0, 2)):
            code, name = rng.choice(DIAGNOSES)
            ts = adm + _minutes(rng, 5, max(6, los_min - 5))
            em.clinical(ep, "diagnosis", ts, department=dept, code=code, name=name)
        for _ in range(rng.randint(1, 4)):
            ts = adm + _minutes(rng, 5, max(6, los_min - 5))
            em.clinical(ep, "lab_result", ts, department=dept,
                        code=rng.choice(LABS), value=f"{rng.uniform(0.1, 99.9):.1f}")

        if los_min >= 18 * 60 and rng.random() < spec.sepsis_rate:
            flag = adm + _minutes(rng, 30, 12 * 60)
            delay = _minutes(rng, 15, 240)
            em.clinical(ep, "sepsis_flag", flag, department=dept)
            em.clinical(ep, "medication_admin", flag + delay, department=dept,
                        name="ceftriaxone", med_class="antibiotic")
            ep.sepsis_flag = flag
            ep.sepsis_minutes = delay.total_seconds() / 60.0
        if los_min >= 240 and rng.random() < 0.3:
            ts = adm + _minutes(rng, 30, los_min - 30)
            em.clinical(ep, "medication_admin", ts, department=dept,
                        name="dipyrone", med_class="analgesic")

        if los_min >= 150 and rng.random() < spec.mortality_rate:
            ep.died = True
            em.adt(ep, patient, "OBITO", disch - timedelta(minutes=60), dept, enc)
        em.adt(ep, patient, "ALTA", disch, dept, enc)

        for _ in range(rng.randint(1, 3)):
            ts = adm + _minutes(rng, 0, los_min)
            amt = Decimal(f"{rng.uniform(500, 20000):.2f}")
            ep.charges.append((ts, amt))
            em.billing(ep, "cobranca", ts, amt, enc, "hospital services")
        for _ in range(rng.randint(1, 2)):
            ts = adm + _minutes(rng, 0, los_min)
            amt = Decimal(f"{rng.uniform(300, 12000):.2f}")
            ep.costs.append((ts, amt))
            em.billing(ep, "custo", ts, amt, enc, "variable costs")

        # follow-up lab inside the grace window, still part of this episode
        if rng.random() < 0.25:
            ts = disch + _minutes(rng, 60, (GRACE_HOURS - 2) * 60)
            if ts < horizon_end:
                em.clinical(ep, "lab_result", ts, department=dept,
                            code=rng.choice(LABS),
                            value=f"{rng.uniform(0.1, 99.9):.1f}")
        episodes.append(ep)

        if ep.died:
            break
        if rng.random() < spec.readmission_rate:
            gap_days = rng.uniform(5, 29)  # strictly inside the 30-day window
        elif rng.random() < 0.25:
            gap_days = rng.uniform(35, 70)  # safely beyond 30 days
        else:
            break
        adm = disch + timedelta(minutes=int(gap_days * 1440))

    # outpatient sessions in windows clear of every inpatient span
    forbidden = [(ep.admission - timedelta(hours=SESSION_GAP_HOURS + 2),
                  ep.discharge + timedelta(hours=GRACE_HOURS + SESSION_GAP_HOURS + 2))
                 for ep in episodes]
    placed: List[datetime] = []
    for _ in range(rng.randint(0, 2)):
        for _attempt in range(20):
            t0 = start + _minutes(rng, 0, spec.days * 1440 - 240)
            if any(lo <= t0 <= hi for lo, hi in forbidden):
                continue
            if any(abs((t0 - p).total_seconds()) < (2 * SESSION_GAP_HOURS + 6) * 3600
                   for p in placed):
                continue
            placed.append(t0)
            dept = rng.choice(list(spec.departments))
            ep = _Episode(patient_id=pid, kind="outpatient", department=dept)
            em.clinical(ep, "appointment", t0, department=dept)
            t = t0
            for _ in range(rng.randint(0, 2)):
                t = t + _minutes(rng, 10, 110)
                em.clinical(ep, "lab_result", t, department=dept,
                            code=rng.choice(LABS),
                            value=f"{rng.uniform(0.1, 99.9):.1f}")
            episodes.append(ep)
            break
    return episodes


# -- ground-truth KPI aggregation (independent of the pipeline) --------------

def _floor_bucket(ts: datetime, bucket: str) -> datetime:
    day = ts.replace(hour=0, minute=0, second=0, microsecond=0)
    if bucket == "DAY":
        return day
    if bucket == "WEEK":
        return day - timedelta(days=day.weekday())
    return day.replace(day=1)


def _next_bucket(start: datetime, bucket: str) -> datetime:
    if bucket == "DAY":
        return start + timedelta(days=1)
    if bucket == "WEEK":
        return start + timedelta(days=7)
    if start.month == 12:
        return start.replace(year=start.year + 1, month=1)
    return start.replace(month=start.month + 1)


def _bounds(t0: datetime, t1: datetime, bucket: str):
    out = []
    cur = _floor_bucket(t0, bucket)
    while cur < t1:
        nxt = _next_bucket(cur, bucket)
        out.append((max(cur, t0), min(nxt, t1)))
        cur = nxt
    return out


def _age_band(birth: date, at: date) -> str:
    years = at.year - birth.year
    if (at.month, at.day) < (birth.month, birth.day):
        years -= 1
    if years <= 17:
        return "0-17"
    if years <= 39:
        return "18-39"
    if years <= 64:
        return "40-64"
    return "65+"


def _median(vs):
    vs = sorted(vs)
    n = len(vs)
    return vs[n // 2] if n % 2 else (vs[n // 2 - 1] + vs[n // 2]) / 2.0


def _stratum(group_by, ep: _Episode, patient: dict) -> str:
    if not group_by:
        return "all"
    parts = []
    birth = date.fromisoformat(patient["birth_date"])
    for g in group_by:
        if g == "gender":
            parts.append(patient["gender"])
        elif g == "age_band":
            parts.append(_age_band(birth, ep.admission.date())
                         if ep.admission else "unknown")
        else:
            parts.append(ep.department or "unknown")
    return "|".join(parts)


def _aggregate(episodes: List[_Episode], patients: Dict[str, dict],
               t0: datetime, t1: datetime, bucket: str, group_by,
               kpi: str, bed_capacity: int, data_end: datetime) -> List[dict]:
    bounds = _bounds(t0, t1, bucket)
    admissions_by_patient: Dict[str, List[datetime]] = {}
    for ep in episodes:
        for ts in ep.admission_times:
            admissions_by_patient.setdefault(ep.patient_id, []).append(ts)

    def bucket_of(ts):
        if not (t0 <= ts < t1):
            return None
        for i, (bs, be) in enumerate(bounds):
            if bs <= ts < be:
                return i
        return None

    acc: Dict[Tuple[int, str], dict] = {}

    def slot(i, s):
        return acc.setdefault((i, s), {"sum": 0.0, "n": 0, "vals": []})

    for ep in episodes:
        s = _stratum(group_by, ep, patients[ep.patient_id])
        if kpi in ("AVG_LOS", "MORTALITY_RATE", "CONTRIBUTION_MARGIN",
                   "READMISSION_30D"):
            if ep.discharge is None:
                continue
            i = bucket_of(ep.discharge)
            if i is None:
                continue
            if kpi == "AVG_LOS":
                sl = slot(i, s); sl["sum"] += ep.los_days; sl["n"] += 1
            elif kpi == "MORTALITY_RATE":
                sl = slot(i, s); sl["sum"] += 1.0 if ep.died else 0.0; sl["n"] += 1
            elif kpi == "CONTRIBUTION_MARGIN":
                margin = float(sum((a for _, a in ep.charges), Decimal(0))
                               - sum((a for _, a in ep.costs), Decimal(0)))
                sl = slot(i, s); sl["sum"] += margin; sl["n"] += 1
            else:
                if ep.discharge + timedelta(days=30) > data_end:
                    continue
                readmitted = any(ep.discharge < ts <= ep.discharge + timedelta(days=30)
                                 for ts in admissions_by_patient.get(ep.patient_id, ()))
                sl = slot(i, s); sl["sum"] += 1.0 if readmitted else 0.0; sl["n"] += 1
        elif kpi == "ADMISSION_COUNT":
            for ts in ep.admission_times:
                i = bucket_of(ts)
                if i is not None:
                    slot(i, s)["n"] += 1
        elif kpi in ("REVENUE", "COSTS"):
            rows = ep.charges if kpi == "REVENUE" else ep.costs
            for ts, amt in rows:
                i = bucket_of(ts)
                if i is not None:
                    sl = slot(i, s); sl["sum"] += float(amt); sl["n"] += 1
        elif kpi == "SEPSIS_DOOR_TO_ANTIBIOTIC":
            if ep.sepsis_flag is None:
                continue
            i = bucket_of(ep.sepsis_flag)
            if i is not None:
                sl = slot(i, s); sl["vals"].append(ep.sepsis_minutes); sl["n"] += 1
        else:  # OCCUPANCY_RATE
            if ep.admission is None:
                continue
            for i, (bs, be) in enumerate(bounds):
                stay_end = ep.discharge if ep.discharge is not None else be
                lo, hi = max(ep.admission, bs), min(stay_end, be)
                if hi > lo:
                    sl = slot(i, s)
                    sl["sum"] += (hi - lo).total_seconds() / 3600.0
                    sl["n"] += 1

    out = []
    for i, (bs, be) in enumerate(bounds):
        strata = {}
        keys = {s for (j, s) in acc if j == i}
        if not group_by:
            keys.add("all")
        for s in sorted(keys):
            sl = acc.get((i, s), {"sum": 0.0, "n": 0, "vals": []})
            n = sl["n"]
            if kpi in ("AVG_LOS", "MORTALITY_RATE", "CONTRIBUTION_MARGIN",
                       "READMISSION_30D"):
                value = sl["sum"] / n if n else None
            elif kpi == "SEPSIS_DOOR_TO_ANTIBIOTIC":
                value = _median(sl["vals"]) if sl["vals"] else None
            elif kpi == "ADMISSION_COUNT":
                value = float(n)
            elif kpi in ("REVENUE", "COSTS"):
                value = sl["sum"]
            else:
                hours = (be - bs).total_seconds() / 3600.0
                value = sl["sum"] / (bed_capacity * hours)
            strata[s] = {"value": value, "n": n}
        out.append({"bucket_start": _fmt_rfc3339(bs), "strata": strata})
    return out


def generate(spec: GenSpec, out_dir: str) -> dict:
    """Write the three source files plus ground truth; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    rng = random.Random(spec.seed)
    em = _Emitter()
    patients: Dict[str, dict] = {}
    episodes: List[_Episode] = []
    for i in range(spec.n_patients):
        pid = f"P{i + 1:04d}"
        birth = date(spec.start_date.year - rng.randint(1, 90),
                     rng.randint(1, 12), rng.randint(1, 28))
        gender = rng.choices(["F", "M", "U"], weights=[49, 49, 2])[0]
        patients[pid] = {"patient_id": pid, "birth_date": birth.isoformat(),
                         "gender": gender}
        episodes.extend(_gen_patient_episodes(rng, spec, pid, patients[pid], em))

    for ep in episodes:
        tss = [ep.admission] if ep.admission else []
        ep.first_event = min(tss) if tss else None

    def dump_csv(path, rows, columns):
        rows = sorted(rows, key=lambda r: (r["_ts"], r[columns[0]]))
        lines = [",".join(columns)]
        for r in rows:
            lines.append(",".join(str(r.get(c, "")) for c in columns))
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write("\n".join(lines) + "\n")
        return len(rows)

    def dump_jsonl(path, rows, keyname):
        rows = sorted(rows, key=lambda r: (r["_ts"], r[keyname]))
        with open(path, "w", encoding="utf-8") as f:
            for r in rows:
                r = {k: v for k, v in r.items() if k != "_ts"}
                f.write(json.dumps(r, sort_keys=True) + "\n")
        return len(rows)

    adt_path = os.path.join(out_dir, "adt.csv")
    billing_path = os.path.join(out_dir, "billing.jsonl")
    clinical_path = os.path.join(out_dir, "clinical.jsonl")
    n_adt = dump_csv(adt_path, em.adt_rows,
                     ["id", "paciente", "atendimento", "tipo", "data", "setor",
                      "nascimento", "sexo"])
    n_bil = dump_jsonl(billing_path, em.billing_rows, "chave")
    n_cli = dump_jsonl(clinical_path, em.clinical_rows, "record_id")

    all_ts = ([r["_ts"] for r in em.adt_rows] + [r["_ts"] for r in em.billing_rows]
              + [r["_ts"] for r in em.clinical_rows])
    data_end = max(all_ts)
    t0 = datetime.combine(spec.start_date, datetime.min.time(), timezone.utc)
    t1 = t0 + timedelta(days=spec.days)

    kpis = {}
    for bucket in ("DAY", "WEEK", "MONTH"):
        kpis[bucket] = {}
        for kpi in KPI_TYPES:
            kpis[bucket][kpi] = {}
            for group_by in GROUP_SUBSETS:
                kpis[bucket][kpi][",".join(group_by)] = _aggregate(
                    episodes, patients, t0, t1, bucket, group_by, kpi,
                    spec.bed_capacity, data_end)

    ground_truth = {
        "spec": {"seed": spec.seed, "n_patients": spec.n_patients,
                 "days": spec.days, "start_date": spec.start_date.isoformat(),
                 "bed_capacity": spec.bed_capacity},
        "window": {"from": _fmt_rfc3339(t0), "to": _fmt_rfc3339(t1)},
        "data_end": _fmt_rfc3339(data_end),
        "patients": [patients[k] for k in sorted(patients)],
        "episodes": [{
            "patient_id": ep.patient_id,
            "kind": ep.kind,
            "department": ep.department,
            "admission": _fmt_rfc3339(ep.admission) if ep.admission else None,
            "discharge": _fmt_rfc3339(ep.discharge) if ep.discharge else None,
            "los_days": ep.los_days,
            "died": ep.died,
            "total_charges": f"{sum((a for _, a in ep.charges), Decimal(0)):.2f}",
            "total_costs": f"{sum((a for _, a in ep.costs), Decimal(0)):.2f}",
            "event_keys": sorted(ep.event_keys),
        } for ep in episodes],
        "kpis": kpis,
    }
    gt_path = os.path.join(out_dir, "ground_truth.json")
    with open(gt_path, "w", encoding="utf-8") as f:
        json.dump(ground_truth, f, sort_keys=True, indent=1)

    manifest = {
        "seed": spec.seed,
        "files": {"adt": adt_path, "billing": billing_path,
                  "clinical": clinical_path},
        "counts": {"adt": n_adt, "billing": n_bil, "clinical": n_cli,
                   "patients": len(patients), "episodes": len(episodes)},
        "ground_truth_path": gt_path,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
    return manifest


def corrupt(out_dir: str, kind: str, count: int = 1) -> List[dict]:
    """Plant deterministic defects in already-generated files."""
    adt_path = os.path.join(out_dir, "adt.csv")
    with open(adt_path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    header = lines[0].split(",")
    locations = []
    if kind == "BAD_DATE":
        col = header.index("data")
        for i in range(1, min(1 + count, len(lines))):
            parts = lines[i].split(",")
            parts[col] = "31/02/2015 99:99"
            lines[i] = ",".join(parts)
            locations.append({"file": "adt.csv", "row": i})
    elif kind == "MISSING_FIELD":
        col = header.index("paciente")
        for i in range(1, min(1 + count, len(lines))):
            parts = lines[i].split(",")
            parts[col] = ""
            lines[i] = ",".join(parts)
            locations.append({"file": "adt.csv", "row": i})
    elif kind == "DUP_KEY":
        dups = []
        for i in range(1, min(1 + count, len(lines))):
            dups.append(lines[i])
            locations.append({"file": "adt.csv", "row": i})
        lines.extend(dups)
    else:
        raise DatagenError(f"unknown corruption kind {kind!r}")
    with open(adt_path, "w", encoding="utf-8", newline="") as f:
        f.write("\n".join(lines) + "\n")
    return locations
