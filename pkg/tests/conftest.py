"""Shared fixtures.

The "ward" fixture is a small hand-built repository with two fully worked
episodes whose KPI values are computed by hand in the tests that use it:

P1, male, born 1960-01-01, cardiology:
    ADMISSION  2015-03-01T08:00Z   encounter E1
    PROCEDURE  stent 2015-03-02T09:00Z
    BILLING    10000.00 2015-03-04T12:00Z
    COST       7000.00  2015-03-04T12:30Z
    DISCHARGE  2015-03-10T08:00Z
    LAB        2015-03-11T10:00Z   (unkeyed, inside the 72h grace window)
    LOS = exactly 9 days.

P2, female, born 1980-05-05, icu:
    ADMISSION  2015-03-05T10:00Z   encounter E2
    SEPSIS     2015-03-05T12:00Z
    MEDICATION antibiotic 2015-03-05T12:45Z  (45 minutes after the flag)
    DEATH      2015-03-07T09:00Z
    DISCHARGE  2015-03-07T10:00Z
    LOS = exactly 2 days.
"""
import datetime as dt
from decimal import Decimal

import pytest

from eockit.builder import LinkagePolicy, rebuild_all
from eockit.model import Patient, make_event, utc
from eockit.repository import Repository


def ev(patient_id, event_type, timestamp, key, **kw):
    """Shorthand event constructor used across the test suite."""
    return make_event(patient_id=patient_id, event_type=event_type,
                      timestamp=timestamp, source_id="test",
                      source_native_key=key, **kw)


WARD_EVENTS = [
    ev("P1", "ADMISSION", utc(2015, 3, 1, 8), "a1", encounter_id="E1",
       department="cardiology"),
    ev("P1", "PROCEDURE", utc(2015, 3, 2, 9), "a2", encounter_id="E1",
       attributes={"code": "stent", "name": "coronary stent"}),
    ev("P1", "BILLING_CHARGE", utc(2015, 3, 4, 12), "a3", encounter_id="E1",
       amount=Decimal("10000.00")),
    ev("P1", "COST_ENTRY", utc(2015, 3, 4, 12, 30), "a4", encounter_id="E1",
       amount=Decimal("7000.00")),
    ev("P1", "DISCHARGE", utc(2015, 3, 10, 8), "a5", encounter_id="E1",
       department="cardiology"),
    ev("P1", "LAB_RESULT", utc(2015, 3, 11, 10), "a6",
       attributes={"code": "troponin", "value": "0.3"}),
    ev("P2", "ADMISSION", utc(2015, 3, 5, 10), "b1", encounter_id="E2",
       department="icu"),
    ev("P2", "SEPSIS_FLAG", utc(2015, 3, 5, 12), "b2", encounter_id="E2"),
    ev("P2", "MEDICATION_ADMIN", utc(2015, 3, 5, 12, 45), "b3",
       encounter_id="E2", attributes={"class": "antibiotic", "name": "ceftriaxone"}),
    ev("P2", "DEATH", utc(2015, 3, 7, 9), "b4", encounter_id="E2"),
    ev("P2", "DISCHARGE", utc(2015, 3, 7, 10), "b5", encounter_id="E2",
       department="icu"),
]

WARD_PATIENTS = [
    Patient("P1", dt.date(1960, 1, 1), "M"),
    Patient("P2", dt.date(1980, 5, 5), "F"),
]


@pytest.fixture()
def ward(tmp_path):
    repo = Repository.open(str(tmp_path / "repo"), "rw")
    repo.upsert_events(WARD_EVENTS)
    repo.upsert_patients(WARD_PATIENTS)
    rebuild_all(repo, LinkagePolicy())
    yield repo
    repo.close()
