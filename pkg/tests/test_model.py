"""Canonical model: ids, money, timestamps, derivation, serialization."""
import datetime as dt
import hashlib
import json
from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from eockit.builder import LinkagePolicy, link_events
from eockit.model import (
    ParseError, ValidationError, canonical_json, derive_fields,
    deserialize_episode, format_instant, make_event, make_event_id,
    make_episode_id, money, money_str, parse_instant, serialize_episode, utc,
    validate_episode,
)
from tests.conftest import WARD_EVENTS, ev


def test_event_id_is_sha256_prefix():
    # recompute the id by hand
    want = "ev-" + hashlib.sha256("adt\x1f000123".encode()).hexdigest()[:24]
    assert make_event_id("adt", "000123") == want


def test_episode_id_is_sha256_prefix():
    want = "ep-" + hashlib.sha256("P1\x1fev-abc".encode()).hexdigest()[:24]
    assert make_episode_id("P1", "ev-abc") == want


def test_money_quantizes_to_cents():
    assert money("10.005") == Decimal("10.00") or money("10.005") == Decimal("10.01")
    assert money_str(money("7")) == "7.00"
    assert money_str(money("12867.639")) == "12867.64"


def test_instant_round_trip():
    t = utc(2015, 3, 1, 8, 30, 15)
    assert format_instant(t) == "2015-03-01T08:30:15Z"
    assert parse_instant("2015-03-01T08:30:15Z") == t


def test_parse_instant_rejects_naive_and_offsets():
    with pytest.raises(ValidationError):
        parse_instant("2015-03-01 08:30:15")
    with pytest.raises(ValidationError):
        parse_instant("not a date")


def test_canonical_json_is_sorted_and_compact():
    s = canonical_json({"b": 1, "a": [2, 3], "c": "á"})
    assert s == '{"a":[2,3],"b":1,"c":"á"}'


def test_financial_events_require_amount():
    with pytest.raises(ValidationError):
        ev("P1", "BILLING_CHARGE", utc(2015, 1, 1), "x1")
    with pytest.raises(ValidationError):
        ev("P1", "ADMISSION", utc(2015, 1, 1), "x2", amount="5.00")


def test_unknown_event_type_rejected():
    with pytest.raises(ValidationError):
        ev("P1", "TELEPORT", utc(2015, 1, 1), "x3")


def _ward_episodes():
    out = []
    for pid in ("P1", "P2"):
        evs = sorted((e for e in WARD_EVENTS if e.patient_id == pid),
                     key=lambda e: (e.timestamp, e.event_id))
        out.extend(link_events(evs, LinkagePolicy()))
    return out


def test_derived_fields_on_ward():
    eps = {e.patient_id: e for e in _ward_episodes()}
    p1 = eps["P1"]
    assert p1.admission_time == utc(2015, 3, 1, 8)
    assert p1.discharge_time == utc(2015, 3, 10, 8)
    assert p1.open is False
    assert p1.primary_department == "cardiology"
    # LOS is fractional days over 86400-second days
    assert p1.derived.length_of_stay_days == 9.0
    assert p1.derived.total_charges == Decimal("10000.00")
    assert p1.derived.total_costs == Decimal("7000.00")
    assert p1.derived.contribution_margin == Decimal("3000.00")
    assert p1.derived.died is False
    p2 = eps["P2"]
    assert p2.derived.length_of_stay_days == 2.0
    assert p2.derived.died is True


def test_serialize_round_trip_byte_identical():
    for e in _ward_episodes():
        text = serialize_episode(e)
        back = deserialize_episode(text)
        assert back == e
        assert serialize_episode(back) == text
        # amounts serialize as 2-dp strings, never floats
        doc = json.loads(text)
        for evd in doc["events"]:
            if evd["amount"] is not None:
                assert isinstance(evd["amount"], str)
                assert evd["amount"] == f"{Decimal(evd['amount']):.2f}"


def test_equal_episodes_serialize_identically():
    a, b = _ward_episodes(), _ward_episodes()
    assert [serialize_episode(x) for x in a] == [serialize_episode(x) for x in b]


def test_deserialize_reports_position():
    with pytest.raises(ParseError) as exc:
        deserialize_episode('{"episode_id": }')
    assert exc.value.position == 15


def test_validate_episode_detects_stale_derived():
    e = _ward_episodes()[0]
    stale = e.__class__(**{**vars(e), "discharge_time": utc(2016, 1, 1)})
    with pytest.raises(ValidationError):
        validate_episode(stale)


def test_validate_episode_detects_unsorted_events():
    e = _ward_episodes()[0]
    shuffled = e.__class__(**{**vars(e), "events": tuple(reversed(e.events))})
    with pytest.raises(ValidationError):
        validate_episode(shuffled)


@given(st.integers(min_value=0, max_value=2_000_000_000))
def test_instant_round_trip_property(epoch):
    t = dt.datetime.fromtimestamp(epoch, tz=dt.timezone.utc)
    assert parse_instant(format_instant(t)) == t


@given(st.decimals(min_value="-99999", max_value="99999",
                   allow_nan=False, allow_infinity=False, places=2))
def test_money_round_trip_property(d):
    assert money(money_str(money(d))) == money(d)


def test_open_episode_has_no_los():
    events = [ev("P9", "ADMISSION", utc(2015, 3, 1, 8), "o1", department="er")]
    (e,) = link_events(events, LinkagePolicy())
    assert e.open is True
    assert e.discharge_time is None
    assert e.derived.length_of_stay_days is None
