"""Bucketed, stratified KPI computation over the live repository.

Formula set (normative for the whole platform; the raw-file oracle script and
the data generator's ground truth implement the same definitions
independently):

  OCCUPANCY_RATE        occupied bed-hours within the bucket (overlap of
                        [admission, discharge-or-bucket-end) with the bucket,
                        episodes with an ADMISSION only) divided by
                        bed_capacity x bucket hours
  AVG_LOS               mean length of stay of episodes discharged in bucket
  MORTALITY_RATE        died episodes / episodes discharged in bucket
  READMISSION_30D       discharged-in-bucket episodes followed by a
                        same-patient ADMISSION within 30 days / discharged in
                        bucket; discharges within 30 days of the data end are
                        right-censored out of the denominator
  CONTRIBUTION_MARGIN   mean (total_charges - total_costs) of episodes
                        discharged in bucket
  SEPSIS_DOOR_TO_ANTIBIOTIC
                        median minutes from the first SEPSIS_FLAG to the
                        first subsequent MEDICATION_ADMIN whose
                        attributes.class is an antibiotic, per episode
                        containing both, attributed to the flag's bucket
  ADMISSION_COUNT       ADMISSION events in bucket
  REVENUE / COSTS       sum of BILLING_CHARGE / COST_ENTRY amounts by event
                        timestamp

Buckets are calendar-aligned (UTC days, ISO weeks starting Monday, calendar
months) and clamped to the query window, so the series covers [from, to)
contiguously. Strata are functions of the episode: patient gender, age band
at admission (0-17, 18-39, 40-64, 65+), and primary department; missing
values stratify as "unknown". Ratio and mean KPIs are ABSENT (null) when
their denominator is zero; counts and sums are 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from decimal import Decimal
from typing import Dict, List, Optional, Sequence, Tuple

from . import filterlang
from .model import EpisodeOfCare, Patient, canonical_json, format_instant
from .repository import Repository, QueryError

KPI_TYPES = (
    "OCCUPANCY_RATE",
    "AVG_LOS",
    "MORTALITY_RATE",
    "READMISSION_30D",
    "CONTRIBUTION_MARGIN",
    "SEPSIS_DOOR_TO_ANTIBIOTIC",
    "ADMISSION_COUNT",
    "REVENUE",
    "COSTS",
)

BUCKETS = ("DAY", "WEEK", "MONTH")
GROUP_FIELDS = ("gender", "age_band", "department")
AGE_BANDS = ((0, 17, "0-17"), (18, 39, "18-39"), (40, 64, "40-64"))

KPI_INFO = {
    "OCCUPANCY_RATE": ("ratio", (0.0, 1.0),
                       "occupied bed-hours in bucket / (bed_capacity x bucket hours)"),
    "AVG_LOS": ("days", (0.0, None),
                "mean length of stay over episodes discharged in bucket"),
    "MORTALITY_RATE": ("ratio", (0.0, 1.0),
                       "died episodes / episodes discharged in bucket"),
    "READMISSION_30D": ("ratio", (0.0, 1.0),
                        "readmitted within 30 days / discharged in bucket "
                        "(right-censored discharges excluded)"),
    "CONTRIBUTION_MARGIN": ("currency", (None, None),
                            "mean (total charges - total costs) over episodes "
                            "discharged in bucket"),
    "SEPSIS_DOOR_TO_ANTIBIOTIC": ("minutes", (0.0, None),
                                  "median minutes from first sepsis flag to first "
                                  "subsequent antibiotic administration"),
    "ADMISSION_COUNT": ("count", (0.0, None), "admissions in bucket"),
    "REVENUE": ("currency", (0.0, None), "sum of billing charges in bucket"),
    "COSTS": ("currency", (0.0, None), "sum of cost entries in bucket"),
}

THIRTY_DAYS = timedelta(days=30)


class KpiError(ValueError):
    pass


class ForecastError(ValueError):
    pass


@dataclass(frozen=True)
class KpiQuery:
    kpi: str
    time_from: datetime
    time_to: datetime
    bucket: str = "MONTH"
    group_by: tuple = ()
    filter_text: Optional[str] = None
    cohort_id: Optional[str] = None

    def __post_init__(self):
        if self.kpi not in KPI_TYPES:
            raise KpiError(f"unknown KPI type {self.kpi!r}")
        if self.bucket not in BUCKETS:
            raise KpiError(f"unknown bucket {self.bucket!r}")
        if self.time_from >= self.time_to:
            raise KpiError("query window requires from < to")
        if len(set(self.group_by)) != len(self.group_by):
            raise KpiError("group_by fields must be distinct")
        for g in self.group_by:
            if g not in GROUP_FIELDS:
                raise KpiError(f"unknown group_by field {g!r}")


@dataclass(frozen=True)
class KpiSettings:
    bed_capacity: int = 10
    antibiotic_classes: tuple = ("antibiotic",)

    def __post_init__(self):
        if self.bed_capacity < 1:
            raise KpiError("bed_capacity must be >= 1")


def age_band(age_years: int) -> str:
    for lo, hi, label in AGE_BANDS:
        if lo <= age_years <= hi:
            return label
    return "65+"


def whole_years(birth, at) -> int:
    years = at.year - birth.year
    if (at.month, at.day) < (birth.month, birth.day):
        years -= 1
    return years


def _floor_bucket(ts: datetime, bucket: str) -> datetime:
    ts = ts.astimezone(timezone.utc)
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


def bucket_bounds(time_from: datetime, time_to: datetime,
                  bucket: str) -> List[Tuple[datetime, datetime]]:
    """Calendar-aligned buckets clamped to [from, to)."""
    out = []
    cursor = _floor_bucket(time_from, bucket)
    while cursor < time_to:
        nxt = _next_bucket(cursor, bucket)
        out.append((max(cursor, time_from), min(nxt, time_to)))
        cursor = nxt
    return out


def stratum_key(query_group_by: Sequence[str], e: EpisodeOfCare,
                p: Optional[Patient]) -> str:
    if not query_group_by:
        return "all"
    parts = []
    for g in query_group_by:
        if g == "gender":
            parts.append(p.gender if p is not None else "unknown")
        elif g == "age_band":
            if p is None or e.admission_time is None:
                parts.append("unknown")
            else:
                parts.append(age_band(whole_years(p.birth_date, e.admission_time.date())))
        elif g == "department":
            parts.append(e.primary_department or "unknown")
    return "|".join(parts)


def _median(values: List[float]) -> float:
    vs = sorted(values)
    n = len(vs)
    mid = n // 2
    if n % 2:
        return vs[mid]
    return (vs[mid - 1] + vs[mid]) / 2.0


def sepsis_interval_minutes(e: EpisodeOfCare, antibiotic_classes) -> Optional[Tuple[datetime, float]]:
    """(first flag time, minutes to first subsequent antibiotic) or None."""
    flag = None
    for ev in e.events:
        if ev.event_type == "SEPSIS_FLAG":
            flag = ev.timestamp
            break
    if flag is None:
        return None
    for ev in e.events:
        if (ev.event_type == "MEDICATION_ADMIN" and ev.timestamp >= flag
                and ev.attributes.get("class") in antibiotic_classes):
            return flag, (ev.timestamp - flag).total_seconds() / 60.0
    return None


def _selected_episodes(repo: Repository, q: KpiQuery) -> List[EpisodeOfCare]:
    members = None
    if q.cohort_id is not None:
        assignment = repo.cohort_assignment(q.cohort_id)
        if assignment is None:
            raise QueryError(f"unknown or unmaterialized cohort {q.cohort_id!r}")
        members = set(assignment["members"])
    ast = filterlang.parse(q.filter_text) if q.filter_text else None
    out = []
    for ep in repo.list_episodes():
        if members is not None and ep.episode_id not in members:
            continue
        if ast is not None:
            if not filterlang.evaluate(ast, ep, repo.get_patient(ep.patient_id)):
                continue
        out.append(ep)
    return out


def _data_end(repo: Repository) -> Optional[datetime]:
    end = None
    for pid in repo.all_patient_ids():
        for ev in repo.scan_events(pid):
            if end is None or ev.timestamp > end:
                end = ev.timestamp
    return end


def compute_kpi(repo: Repository, q: KpiQuery,
                settings: KpiSettings = KpiSettings()) -> dict:
    """Compute a KPI series against the live repository.

    Returns the canonical series structure: query echo plus one entry per
    bucket with per-stratum {value, n}.
    """
    episodes = _selected_episodes(repo, q)
    patients = repo.patients()
    bounds = bucket_bounds(q.time_from, q.time_to, q.bucket)
    strata_of = {e.episode_id: stratum_key(q.group_by, e, patients.get(e.patient_id))
                 for e in episodes}

    # numerator/denominator accumulators per (bucket index, stratum)
    num: Dict[Tuple[int, str], float] = {}
    den: Dict[Tuple[int, str], float] = {}
    cnt: Dict[Tuple[int, str], int] = {}
    med: Dict[Tuple[int, str], List[float]] = {}

    def bucket_of(ts: datetime) -> Optional[int]:
        if not (q.time_from <= ts < q.time_to):
            return None
        for i, (bs, be) in enumerate(bounds):
            if bs <= ts < be:
                return i
        return None

    kpi = q.kpi
    if kpi in ("AVG_LOS", "MORTALITY_RATE", "CONTRIBUTION_MARGIN", "READMISSION_30D"):
        admissions_by_patient: Dict[str, List[datetime]] = {}
        data_end = None
        if kpi == "READMISSION_30D":
            for pid in repo.all_patient_ids():
                for ev in repo.scan_events(pid):
                    if ev.event_type == "ADMISSION":
                        admissions_by_patient.setdefault(pid, []).append(ev.timestamp)
            data_end = _data_end(repo)
        for e in episodes:
            if e.discharge_time is None:
                continue
            i = bucket_of(e.discharge_time)
            if i is None:
                continue
            key = (i, strata_of[e.episode_id])
            if kpi == "AVG_LOS":
                num[key] = num.get(key, 0.0) + e.derived.length_of_stay_days
                cnt[key] = cnt.get(key, 0) + 1
            elif kpi == "MORTALITY_RATE":
                num[key] = num.get(key, 0.0) + (1.0 if e.derived.died else 0.0)
                cnt[key] = cnt.get(key, 0) + 1
            elif kpi == "CONTRIBUTION_MARGIN":
                num[key] = num.get(key, 0.0) + float(e.derived.contribution_margin)
                cnt[key] = cnt.get(key, 0) + 1
            else:  # READMISSION_30D
                if data_end is not None and e.discharge_time + THIRTY_DAYS > data_end:
                    continue  # right-censored
                readmitted = any(
                    e.discharge_time < ts <= e.discharge_time + THIRTY_DAYS
                    for ts in admissions_by_patient.get(e.patient_id, ()))
                num[key] = num.get(key, 0.0) + (1.0 if readmitted else 0.0)
                cnt[key] = cnt.get(key, 0) + 1
    elif kpi == "ADMISSION_COUNT":
        for e in episodes:
            key_s = strata_of[e.episode_id]
            for ev in e.events:
                if ev.event_type != "ADMISSION":
                    continue
                i = bucket_of(ev.timestamp)
                if i is not None:
                    cnt[(i, key_s)] = cnt.get((i, key_s), 0) + 1
    elif kpi in ("REVENUE", "COSTS"):
        etype = "BILLING_CHARGE" if kpi == "REVENUE" else "COST_ENTRY"
        for e in episodes:
            key_s = strata_of[e.episode_id]
            for ev in e.events:
                if ev.event_type != etype:
                    continue
                i = bucket_of(ev.timestamp)
                if i is not None:
                    num[(i, key_s)] = num.get((i, key_s), 0.0) + float(ev.amount)
                    cnt[(i, key_s)] = cnt.get((i, key_s), 0) + 1
    elif kpi == "SEPSIS_DOOR_TO_ANTIBIOTIC":
        for e in episodes:
            r = sepsis_interval_minutes(e, settings.antibiotic_classes)
            if r is None:
                continue
            flag_ts, minutes = r
            i = bucket_of(flag_ts)
            if i is not None:
                key = (i, strata_of[e.episode_id])
                med.setdefault(key, []).append(minutes)
                cnt[key] = cnt.get(key, 0) + 1
    elif kpi == "OCCUPANCY_RATE":
        for e in episodes:
            if e.admission_time is None:
                continue
            key_s = strata_of[e.episode_id]
            for i, (bs, be) in enumerate(bounds):
                stay_end = e.discharge_time if e.discharge_time is not None else be
                lo = max(e.admission_time, bs)
                hi = min(stay_end, be)
                if hi > lo:
                    hours = (hi - lo).total_seconds() / 3600.0
                    key = (i, key_s)
                    num[key] = num.get(key, 0.0) + hours
                    cnt[key] = cnt.get(key, 0) + 1

    out_buckets = []
    for i, (bs, be) in enumerate(bounds):
        strata: Dict[str, dict] = {}
        keys = {s for (j, s) in set(num) | set(cnt) | set(med) if j == i}
        if not q.group_by:
            keys.add("all")
        for s in sorted(keys):
            key = (i, s)
            n = cnt.get(key, 0)
            if kpi in ("AVG_LOS", "MORTALITY_RATE", "CONTRIBUTION_MARGIN",
                       "READMISSION_30D"):
                value = (num.get(key, 0.0) / n) if n else None
            elif kpi == "SEPSIS_DOOR_TO_ANTIBIOTIC":
                value = _median(med[key]) if key in med else None
            elif kpi == "ADMISSION_COUNT":
                value = float(n)
            elif kpi in ("REVENUE", "COSTS"):
                value = num.get(key, 0.0)
            else:  # OCCUPANCY_RATE
                bucket_hours = (be - bs).total_seconds() / 3600.0
                value = num.get(key, 0.0) / (settings.bed_capacity * bucket_hours)
            strata[s] = {"value": value, "n": n}
        out_buckets.append({"bucket_start": format_instant(bs), "strata": strata})

    return {
        "query": {
            "kpi": q.kpi,
            "from": format_instant(q.time_from),
            "to": format_instant(q.time_to),
            "bucket": q.bucket,
            "group_by": list(q.group_by),
            "filter": q.filter_text,
            "cohort": q.cohort_id,
        },
        "buckets": out_buckets,
    }


def compare_to_average(repo: Repository, q: KpiQuery,
                       settings: KpiSettings = KpiSettings()) -> dict:
    """Cohort series next to the whole-hospital series (cohort/filter cleared)."""
    if q.cohort_id is None:
        raise KpiError("compare_to_average requires a cohort")
    cohort_series = compute_kpi(repo, q, settings)
    hospital_q = replace(q, cohort_id=None, filter_text=None)
    hospital_series = compute_kpi(repo, hospital_q, settings)
    return {"cohort": cohort_series, "hospital": hospital_series}


def ols_fit(points: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """Least-squares (slope, intercept) via the normal equations."""
    n = len(points)
    sx = sum(x for x, _ in points)
    sy = sum(y for _, y in points)
    sxx = sum(x * x for x, _ in points)
    sxy = sum(x * y for x, y in points)
    denom = n * sxx - sx * sx
    if denom == 0:
        return 0.0, sy / n
    slope = (n * sxy - sx * sy) / denom
    intercept = (sy - slope * sx) / n
    return slope, intercept


def clamp_to_range(value: float, kpi: str) -> float:
    lo, hi = KPI_INFO[kpi][1]
    if lo is not None and value < lo:
        return lo
    if hi is not None and value > hi:
        return hi
    return value


def forecast(repo: Repository, q: KpiQuery, horizon: int,
             scenario_multiplier: float = 1.0,
             settings: KpiSettings = KpiSettings()) -> dict:
    """OLS line over monthly history, projected ahead and scaled by scenario."""
    if horizon < 1:
        raise ForecastError("forecast horizon must be >= 1 month")
    if q.bucket != "MONTH":
        raise ForecastError("forecast requires MONTH buckets")
    if q.group_by:
        raise ForecastError("forecast requires an ungrouped query")
    series = compute_kpi(repo, q, settings)
    history = []
    points = []
    for i, b in enumerate(series["buckets"]):
        value = b["strata"].get("all", {}).get("value")
        history.append({"bucket_start": b["bucket_start"], "value": value})
        if value is not None:
            points.append((float(i), float(value)))
    if len(points) < 3:
        raise ForecastError(
            f"forecast needs at least 3 non-absent history buckets, got {len(points)}")
    slope, intercept = ols_fit(points)
    n_hist = len(series["buckets"])
    projections = []
    cursor = _floor_bucket(_parse(series["buckets"][-1]["bucket_start"]), "MONTH")
    for h in range(1, horizon + 1):
        cursor = _next_bucket(cursor, "MONTH")
        raw = (intercept + slope * (n_hist - 1 + h)) * scenario_multiplier
        projections.append({"bucket_start": format_instant(cursor),
                            "value": clamp_to_range(raw, q.kpi)})
    return {
        "kpi": q.kpi,
        "method": "ols_linear",
        "scenario_multiplier": scenario_multiplier,
        "history": history,
        "projections": projections,
    }


def _parse(text: str) -> datetime:
    from .model import parse_instant
    return parse_instant(text)


def evaluate_tracked(repo: Repository, items: Sequence[dict], now: datetime,
                     settings: KpiSettings = KpiSettings()) -> List[dict]:
    """Per-item current value vs target; the value is the latest complete-month
    bucket at `now`."""
    out = []
    for item in items:
        q = KpiQuery(
            kpi=item["kpi"],
            time_from=_parse(item["from"]),
            time_to=_parse(item["to"]),
            bucket="MONTH",
            group_by=tuple(item.get("group_by") or ()),
            filter_text=item.get("filter"),
            cohort_id=item.get("cohort"),
        )
        series = compute_kpi(repo, q, settings)
        current = None
        current_bucket = None
        for b in series["buckets"]:
            bs = _parse(b["bucket_start"])
            month_end = _next_bucket(_floor_bucket(bs, "MONTH"), "MONTH")
            if month_end <= now:
                current = b["strata"].get("all", {}).get("value")
                current_bucket = b["bucket_start"]
        target = float(item["target"])
        direction = item["direction"]
        if current is None:
            status = "AT_RISK"
            absent = True
        else:
            absent = False
            if direction == "AT_MOST":
                status = "ON_TRACK" if current <= target else "AT_RISK"
            else:
                status = "ON_TRACK" if current >= target else "AT_RISK"
        out.append({
            "item_id": item["item_id"],
            "name": item.get("name", item["item_id"]),
            "kpi": item["kpi"],
            "current_value": current,
            "current_bucket": current_bucket,
            "target": target,
            "direction": direction,
            "status": status,
            "value_absent": absent,
        })
    return out
