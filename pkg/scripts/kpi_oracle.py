#!/usr/bin/env python3
"""Independent KPI oracle over the raw generated source files.

Reads adt.csv / billing.jsonl / clinical.jsonl directly, re-derives the
episode grouping with its own code, and computes KPI series for every
KPI x bucket x group_by combination. Used by the acceptance suite to check
the pipeline end to end; deliberately imports nothing from the package.

Usage:
    python scripts/kpi_oracle.py --data DIR --from 2015-03-01T00:00:00Z \
        --to 2015-05-30T00:00:00Z --bed-capacity 50 > oracle.json
"""
import argparse
import csv
import json
import os
import sys
from datetime import date, datetime, timedelta, timezone

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


def parse_rfc3339(s):
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    return datetime.fromisoformat(s).astimezone(timezone.utc)


def load_events(data_dir):
    """Flat event records from the three raw files."""
    events = []
    patients = {}
    with open(os.path.join(data_dir, "adt.csv"), newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            ts = datetime.strptime(row["data"], "%d/%m/%Y %H:%M").replace(
                tzinfo=timezone.utc)
            kind = {"ADMISSAO": "ADMISSION", "ALTA": "DISCHARGE",
                    "TRANSFERENCIA": "TRANSFER", "OBITO": "DEATH"}[row["tipo"]]
            events.append({"patient": row["paciente"], "enc": row["atendimento"] or None,
                           "type": kind, "ts": ts, "dept": row["setor"] or None,
                           "key": "adt:" + row["id"]})
            if row["paciente"] not in patients:
                patients[row["paciente"]] = {
                    "gender": row["sexo"],
                    "birth": datetime.strptime(row["nascimento"], "%d/%m/%Y").date(),
                }
    with open(os.path.join(data_dir, "billing.jsonl"), encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            r = json.loads(line)
            events.append({"patient": r["paciente"], "enc": r.get("atendimento") or None,
                           "type": "BILLING_CHARGE" if r["tipo"] == "cobranca" else "COST_ENTRY",
                           "ts": datetime.fromtimestamp(int(r["ts"]), tz=timezone.utc),
                           "dept": None, "amount": float(r["valor"]),
                           "key": "billing:" + r["chave"]})
    kinds = {"procedure": "PROCEDURE", "diagnosis": "DIAGNOSIS",
             "lab_result": "LAB_RESULT", "sepsis_flag": "SEPSIS_FLAG",
             "medication_admin": "MEDICATION_ADMIN", "appointment": "APPOINTMENT"}
    with open(os.path.join(data_dir, "clinical.jsonl"), encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            r = json.loads(line)
            events.append({"patient": r["patient_id"], "enc": r.get("encounter_id") or None,
                           "type": kinds[r["event_kind"]],
                           "ts": parse_rfc3339(r["time"]),
                           "dept": r.get("department"), "class": r.get("class"),
                           "key": "clinical:" + r["record_id"]})
    return events, patients


def group_episodes(events):
    """Re-derive the episode partition: encounter groups, grace-window
    absorption around admissions, then 24h session clustering."""
    by_patient = {}
    for ev in events:
        by_patient.setdefault(ev["patient"], []).append(ev)
    episodes = []
    for patient, evs in sorted(by_patient.items()):
        evs.sort(key=lambda e: (e["ts"], e["key"]))
        blocks = {}
        unkeyed = []
        for ev in evs:
            if ev["enc"]:
                blocks.setdefault(ev["enc"], []).append(ev)
            else:
                unkeyed.append(ev)
        blocks = list(blocks.values())
        spans = []
        spanned = [b for b in blocks
                   if any(e["type"] == "ADMISSION" for e in b)]
        spanned.sort(key=lambda b: min(e["ts"] for e in b if e["type"] == "ADMISSION"))
        for i, b in enumerate(spanned):
            start = min(e["ts"] for e in b if e["type"] == "ADMISSION")
            dis = [e["ts"] for e in b if e["type"] == "DISCHARGE"]
            end = max(dis) + timedelta(hours=GRACE_HOURS) if dis else None
            cut = None
            if i + 1 < len(spanned):
                nxt = min(e["ts"] for e in spanned[i + 1]
                          if e["type"] == "ADMISSION")
                if end is None or nxt < end:
                    end, cut = nxt, nxt
            spans.append((start, end, cut, b))
        leftovers = []
        for ev in unkeyed:
            placed = False
            for start, end, cut, b in spans:
                if ev["ts"] < start:
                    continue
                if end is None:
                    placed = True
                elif cut is not None:
                    placed = ev["ts"] < end
                else:
                    placed = ev["ts"] <= end
                if placed:
                    b.append(ev)
                    break
            if not placed:
                leftovers.append(ev)
        session = None
        gap = timedelta(hours=SESSION_GAP_HOURS)
        for ev in leftovers:
            if session is not None and ev["ts"] - session[-1]["ts"] <= gap:
                session.append(ev)
            else:
                session = [ev]
                blocks.append(session)
        for b in blocks:
            b.sort(key=lambda e: (e["ts"], e["key"]))
            episodes.append({"patient": patient, "events": b})
    return episodes


def episode_facts(ep):
    evs = ep["events"]
    adms = [e["ts"] for e in evs if e["type"] == "ADMISSION"]
    diss = [e["ts"] for e in evs if e["type"] == "DISCHARGE"]
    adm = min(adms) if adms else None
    dis = max(diss) if diss else None
    dept = None
    for e in evs:
        if e.get("dept"):
            dept = e["dept"]
            break
    flag = None
    minutes = None
    for e in evs:
        if e["type"] == "SEPSIS_FLAG":
            flag = e["ts"]
            break
    if flag is not None:
        for e in evs:
            if (e["type"] == "MEDICATION_ADMIN" and e["ts"] >= flag
                    and e.get("class") == "antibiotic"):
                minutes = (e["ts"] - flag).total_seconds() / 60.0
                break
        if minutes is None:
            flag = None
    return {
        "patient": ep["patient"],
        "adm": adm, "dis": dis, "dept": dept,
        "los": (dis - adm).total_seconds() / 86400.0 if adm and dis else None,
        "died": any(e["type"] == "DEATH" for e in evs),
        "charges": [(e["ts"], e["amount"]) for e in evs
                    if e["type"] == "BILLING_CHARGE"],
        "costs": [(e["ts"], e["amount"]) for e in evs if e["type"] == "COST_ENTRY"],
        "admissions": adms,
        "flag": flag, "minutes": minutes,
        "keys": sorted(e["key"] for e in evs),
    }


def floor_bucket(ts, bucket):
    day = ts.replace(hour=0, minute=0, second=0, microsecond=0)
    if bucket == "DAY":
        return day
    if bucket == "WEEK":
        return day - timedelta(days=day.weekday())
    return day.replace(day=1)


def next_bucket(start, bucket):
    if bucket == "DAY":
        return start + timedelta(days=1)
    if bucket == "WEEK":
        return start + timedelta(days=7)
    if start.month == 12:
        return start.replace(year=start.year + 1, month=1)
    return start.replace(month=start.month + 1)


def bounds_of(t0, t1, bucket):
    out = []
    cur = floor_bucket(t0, bucket)
    while cur < t1:
        nxt = next_bucket(cur, bucket)
        out.append((max(cur, t0), min(nxt, t1)))
        cur = nxt
    return out


def age_band(birth, at):
    years = at.year - birth.year
    if (at.month, at.day) < (birth.month, birth.day):
        years -= 1
    for hi, label in ((17, "0-17"), (39, "18-39"), (64, "40-64")):
        if years <= hi:
            return label
    return "65+"


def median(vs):
    vs = sorted(vs)
    n = len(vs)
    return vs[n // 2] if n % 2 else (vs[n // 2 - 1] + vs[n // 2]) / 2.0


def stratum(group_by, fact, patient):
    if not group_by:
        return "all"
    parts = []
    for g in group_by:
        if g == "gender":
            parts.append(patient["gender"])
        elif g == "age_band":
            parts.append(age_band(patient["birth"], fact["adm"].date())
                         if fact["adm"] else "unknown")
        else:
            parts.append(fact["dept"] or "unknown")
    return "|".join(parts)


def aggregate(facts, patients, t0, t1, bucket, group_by, kpi, bed_capacity,
              data_end):
    bounds = bounds_of(t0, t1, bucket)
    adm_by_patient = {}
    for f in facts:
        for ts in f["admissions"]:
            adm_by_patient.setdefault(f["patient"], []).append(ts)

    def bucket_of(ts):
        if not (t0 <= ts < t1):
            return None
        for i, (bs, be) in enumerate(bounds):
            if bs <= ts < be:
                return i
        return None

    acc = {}

    def slot(i, s):
        return acc.setdefault((i, s), {"sum": 0.0, "n": 0, "vals": []})

    for f in facts:
        s = stratum(group_by, f, patients[f["patient"]])
        if kpi in ("AVG_LOS", "MORTALITY_RATE", "CONTRIBUTION_MARGIN",
                   "READMISSION_30D"):
            if f["dis"] is None:
                continue
            i = bucket_of(f["dis"])
            if i is None:
                continue
            if kpi == "AVG_LOS":
                sl = slot(i, s); sl["sum"] += f["los"]; sl["n"] += 1
            elif kpi == "MORTALITY_RATE":
                sl = slot(i, s); sl["sum"] += 1.0 if f["died"] else 0.0; sl["n"] += 1
            elif kpi == "CONTRIBUTION_MARGIN":
                margin = sum(a for _, a in f["charges"]) - sum(a for _, a in f["costs"])
                sl = slot(i, s); sl["sum"] += margin; sl["n"] += 1
            else:
                if f["dis"] + timedelta(days=30) > data_end:
                    continue
                readmitted = any(f["dis"] < ts <= f["dis"] + timedelta(days=30)
                                 for ts in adm_by_patient.get(f["patient"], ()))
                sl = slot(i, s); sl["sum"] += 1.0 if readmitted else 0.0; sl["n"] += 1
        elif kpi == "ADMISSION_COUNT":
            for ts in f["admissions"]:
                i = bucket_of(ts)
                if i is not None:
                    slot(i, s)["n"] += 1
        elif kpi in ("REVENUE", "COSTS"):
            for ts, amt in (f["charges"] if kpi == "REVENUE" else f["costs"]):
                i = bucket_of(ts)
                if i is not None:
                    sl = slot(i, s); sl["sum"] += amt; sl["n"] += 1
        elif kpi == "SEPSIS_DOOR_TO_ANTIBIOTIC":
            if f["flag"] is None:
                continue
            i = bucket_of(f["flag"])
            if i is not None:
                sl = slot(i, s); sl["vals"].append(f["minutes"]); sl["n"] += 1
        else:  # OCCUPANCY_RATE
            if f["adm"] is None:
                continue
            for i, (bs, be) in enumerate(bounds):
                stay_end = f["dis"] if f["dis"] is not None else be
                lo, hi = max(f["adm"], bs), min(stay_end, be)
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
                value = median(sl["vals"]) if sl["vals"] else None
            elif kpi == "ADMISSION_COUNT":
                value = float(n)
            elif kpi in ("REVENUE", "COSTS"):
                value = sl["sum"]
            else:
                hours = (be - bs).total_seconds() / 3600.0
                value = sl["sum"] / (bed_capacity * hours)
            strata[s] = {"value": value, "n": n}
        out.append({"bucket_start": bs.strftime("%Y-%m-%dT%H:%M:%SZ"),
                    "strata": strata})
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", required=True, help="directory with the raw files")
    ap.add_argument("--from", dest="time_from", required=True)
    ap.add_argument("--to", dest="time_to", required=True)
    ap.add_argument("--bed-capacity", type=int, default=10)
    args = ap.parse_args(argv)

    events, patients = load_events(args.data)
    facts = [episode_facts(ep) for ep in group_episodes(events)]
    data_end = max(e["ts"] for e in events)
    t0 = parse_rfc3339(args.time_from)
    t1 = parse_rfc3339(args.time_to)

    result = {"episodes": [f["keys"] for f in facts], "kpis": {}}
    for bucket in ("DAY", "WEEK", "MONTH"):
        result["kpis"][bucket] = {}
        for kpi in KPI_TYPES:
            result["kpis"][bucket][kpi] = {}
            for group_by in GROUP_SUBSETS:
                result["kpis"][bucket][kpi][",".join(group_by)] = aggregate(
                    facts, patients, t0, t1, bucket, group_by, kpi,
                    args.bed_capacity, data_end)
    json.dump(result, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
