"""KPI processor: hand-computed expectations on the ward fixture, bucketing,
stratification, forecast and tracked targets.

Hand-worked ward numbers (see conftest for the event layout):
  P1: LOS 9.0 d, margin 3000.00, survived, cardiology, age 55 (born 1960-01-01,
      admitted 2015-03-01), no sepsis.
  P2: LOS 2.0 d, margin 0.00, died, icu, age 34, sepsis->antibiotic 45 min.
  AVG_LOS March = (9+2)/2 = 5.5       MORTALITY_RATE March = 1/2 = 0.5
  CONTRIBUTION_MARGIN March = 1500.0  SEPSIS median = 45.0
  OCCUPANCY over [Mar 1, Mar 11), 10 beds = (216+48)/(10*240) = 0.11
"""
import math

import pytest

from eockit import kpi
from eockit.model import parse_instant, utc
from eockit.repository import QueryError

MAR = utc(2015, 3, 1)
APR = utc(2015, 4, 1)
SETTINGS = kpi.KpiSettings(bed_capacity=10)


def q(kpi_type, t0=MAR, t1=APR, **kw):
    return kpi.KpiQuery(kpi=kpi_type, time_from=t0, time_to=t1, **kw)


def one_value(result):
    (bucket,) = result["buckets"]
    return bucket["strata"]["all"]["value"], bucket["strata"]["all"]["n"]


def test_avg_los(ward):
    v, n = one_value(kpi.compute_kpi(ward, q("AVG_LOS"), SETTINGS))
    assert (v, n) == (5.5, 2)


def test_mortality_rate(ward):
    v, n = one_value(kpi.compute_kpi(ward, q("MORTALITY_RATE"), SETTINGS))
    assert (v, n) == (0.5, 2)


def test_contribution_margin(ward):
    v, n = one_value(kpi.compute_kpi(ward, q("CONTRIBUTION_MARGIN"), SETTINGS))
    assert (v, n) == (1500.0, 2)


def test_sepsis_door_to_antibiotic(ward):
    v, n = one_value(kpi.compute_kpi(ward, q("SEPSIS_DOOR_TO_ANTIBIOTIC"), SETTINGS))
    assert (v, n) == (45.0, 1)


def test_occupancy_rate_clamped_window(ward):
    # 216 occupied hours from P1 + 48 from P2 over a 240h clamped month bucket
    res = kpi.compute_kpi(ward, q("OCCUPANCY_RATE", MAR, utc(2015, 3, 11)), SETTINGS)
    v, n = one_value(res)
    assert v == pytest.approx((216 + 48) / (10 * 240), rel=1e-12)
    assert v == pytest.approx(0.11)
    assert n == 2


def test_admission_count_event_attribution(ward):
    res = kpi.compute_kpi(ward, q("ADMISSION_COUNT", bucket="DAY"), SETTINGS)
    by_day = {b["bucket_start"]: b["strata"].get("all", {}).get("value")
              for b in res["buckets"]}
    assert by_day["2015-03-01T00:00:00Z"] == 1.0
    assert by_day["2015-03-05T00:00:00Z"] == 1.0
    assert by_day["2015-03-02T00:00:00Z"] == 0.0
    assert len(res["buckets"]) == 31


def test_revenue_and_costs(ward):
    v, n = one_value(kpi.compute_kpi(ward, q("REVENUE"), SETTINGS))
    assert (v, n) == (10000.0, 1)
    v, n = one_value(kpi.compute_kpi(ward, q("COSTS"), SETTINGS))
    assert (v, n) == (7000.0, 1)


def test_readmission_censored_to_absent(ward):
    # data ends 2015-03-11; both discharges are within 30 days of it,
    # so the denominator censors to zero and the value is absent
    v, n = one_value(kpi.compute_kpi(ward, q("READMISSION_30D"), SETTINGS))
    assert v is None
    assert n == 0


def test_absent_vs_zero_semantics(ward):
    feb = utc(2015, 2, 1)
    res = kpi.compute_kpi(ward, q("AVG_LOS", feb, MAR), SETTINGS)
    v, n = one_value(res)
    assert v is None and n == 0
    res = kpi.compute_kpi(ward, q("REVENUE", feb, MAR), SETTINGS)
    v, n = one_value(res)
    assert v == 0.0 and n == 0
    res = kpi.compute_kpi(ward, q("ADMISSION_COUNT", feb, MAR), SETTINGS)
    v, n = one_value(res)
    assert v == 0.0 and n == 0


def test_week_buckets_are_iso_monday_aligned(ward):
    res = kpi.compute_kpi(ward, q("ADMISSION_COUNT", bucket="WEEK"), SETTINGS)
    starts = [b["bucket_start"] for b in res["buckets"]]
    # March 1 2015 is a Sunday; its week bucket is clamped to the window start
    assert starts[0] == "2015-03-01T00:00:00Z"
    assert starts[1] == "2015-03-02T00:00:00Z"  # Monday
    for s in starts[1:]:
        assert parse_instant(s).weekday() == 0


def test_stratified_by_department(ward):
    res = kpi.compute_kpi(ward, q("AVG_LOS", group_by=("department",)), SETTINGS)
    (bucket,) = res["buckets"]
    assert bucket["strata"] == {
        "cardiology": {"value": 9.0, "n": 1},
        "icu": {"value": 2.0, "n": 1},
    }


def test_stratified_by_gender_and_age_band(ward):
    res = kpi.compute_kpi(ward, q("AVG_LOS", group_by=("gender", "age_band")),
                          SETTINGS)
    (bucket,) = res["buckets"]
    assert bucket["strata"] == {
        "M|40-64": {"value": 9.0, "n": 1},
        "F|18-39": {"value": 2.0, "n": 1},
    }


def test_strata_sum_matches_ungrouped(ward):
    whole = kpi.compute_kpi(ward, q("REVENUE"), SETTINGS)
    split = kpi.compute_kpi(ward, q("REVENUE", group_by=("department",)), SETTINGS)
    for wb, sb in zip(whole["buckets"], split["buckets"]):
        assert sum(c["value"] for c in sb["strata"].values()) == \
            pytest.approx(wb["strata"]["all"]["value"])


def test_filtered_query(ward):
    res = kpi.compute_kpi(
        ward, q("AVG_LOS", filter_text='department = "cardiology"'), SETTINGS)
    v, n = one_value(res)
    assert (v, n) == (9.0, 1)


def test_unknown_cohort_raises(ward):
    with pytest.raises(QueryError):
        kpi.compute_kpi(ward, q("AVG_LOS", cohort_id="ghost"), SETTINGS)


def test_query_echo_round_trips(ward):
    res = kpi.compute_kpi(
        ward, q("AVG_LOS", group_by=("gender",), filter_text="los >= 0"),
        SETTINGS)
    assert res["query"] == {
        "kpi": "AVG_LOS", "from": "2015-03-01T00:00:00Z",
        "to": "2015-04-01T00:00:00Z", "bucket": "MONTH",
        "group_by": ["gender"], "filter": "los >= 0", "cohort": None,
    }


def test_query_validation():
    with pytest.raises(kpi.KpiError):
        q("AVG_LOS", APR, MAR)
    with pytest.raises(kpi.KpiError):
        q("NOPE")
    with pytest.raises(kpi.KpiError):
        q("AVG_LOS", bucket="YEAR")
    with pytest.raises(kpi.KpiError):
        q("AVG_LOS", group_by=("height",))


# --- OLS and forecasting -----------------------------------------------------

def test_ols_exact_line():
    slope, intercept = kpi.ols_fit([(0, 100), (1, 110), (2, 120), (3, 130)])
    assert slope == pytest.approx(10.0, abs=1e-12)
    assert intercept == pytest.approx(100.0, abs=1e-12)


def test_ols_matches_normal_equations():
    import random
    rng = random.Random(17)
    pts = [(float(i), rng.uniform(-5, 5) + 0.3 * i) for i in range(12)]
    slope, intercept = kpi.ols_fit(pts)
    n = len(pts)
    sx = sum(x for x, _ in pts); sy = sum(y for _, y in pts)
    sxx = sum(x * x for x, _ in pts); sxy = sum(x * y for x, y in pts)
    s2 = (n * sxy - sx * sy) / (n * sxx - sx * sx)
    i2 = (sy - s2 * sx) / n
    assert slope == pytest.approx(s2, rel=1e-9)
    assert intercept == pytest.approx(i2, rel=1e-9)
    # residual orthogonality, the defining property of least squares
    res = [y - (intercept + slope * x) for x, y in pts]
    assert sum(res) == pytest.approx(0.0, abs=1e-7)
    assert sum(r * x for r, (x, _) in zip(res, pts)) == pytest.approx(0.0, abs=1e-6)


def _monthly_revenue_repo(tmp_path, values):
    """A repo whose monthly REVENUE series equals `values` starting Jan 2015."""
    from eockit.builder import LinkagePolicy, rebuild_all
    from eockit.repository import Repository
    from tests.conftest import ev
    repo = Repository.open(str(tmp_path / "fc"), "rw")
    events = []
    for i, v in enumerate(values):
        month = utc(2015, 1 + i, 15)
        events.append(ev("PF", "BILLING_CHARGE", month, f"f{i}", amount=str(v)))
    repo.upsert_events(sorted(events, key=lambda e: (e.timestamp, e.event_id)))
    rebuild_all(repo, LinkagePolicy())
    return repo


def test_forecast_linear_series(tmp_path):
    repo = _monthly_revenue_repo(tmp_path, [100, 110, 120, 130])
    try:
        res = kpi.forecast(repo, q("REVENUE", utc(2015, 1, 1), utc(2015, 5, 1)),
                           horizon=2, settings=SETTINGS)
        assert res["method"] == "ols_linear"
        assert [p["bucket_start"] for p in res["projections"]] == \
            ["2015-05-01T00:00:00Z", "2015-06-01T00:00:00Z"]
        assert res["projections"][0]["value"] == pytest.approx(140.0, abs=1e-6)
        assert res["projections"][1]["value"] == pytest.approx(150.0, abs=1e-6)
        scaled = kpi.forecast(repo, q("REVENUE", utc(2015, 1, 1), utc(2015, 5, 1)),
                              horizon=2, scenario_multiplier=1.1, settings=SETTINGS)
        assert scaled["projections"][0]["value"] == pytest.approx(154.0, abs=1e-6)
        assert scaled["projections"][1]["value"] == pytest.approx(165.0, abs=1e-6)
    finally:
        repo.close()


def test_forecast_clamps_to_valid_range(tmp_path):
    repo = _monthly_revenue_repo(tmp_path, [30, 20, 10])
    try:
        res = kpi.forecast(repo, q("REVENUE", utc(2015, 1, 1), utc(2015, 4, 1)),
                           horizon=3, settings=SETTINGS)
        # the line hits zero at month 3 and would go negative after
        assert res["projections"][-1]["value"] == 0.0
    finally:
        repo.close()


def test_forecast_needs_history_and_month_buckets(ward):
    with pytest.raises(kpi.ForecastError):
        kpi.forecast(ward, q("REVENUE"), horizon=1, settings=SETTINGS)
    with pytest.raises(kpi.ForecastError):
        kpi.forecast(ward, q("REVENUE", bucket="DAY"), horizon=1, settings=SETTINGS)
    with pytest.raises(kpi.ForecastError):
        kpi.forecast(ward, q("REVENUE", group_by=("gender",)), horizon=1,
                     settings=SETTINGS)
    with pytest.raises(kpi.ForecastError):
        kpi.forecast(ward, q("REVENUE"), horizon=0, settings=SETTINGS)


def test_compare_to_average(ward):
    eids = sorted(ward.episode_ids())
    ward.put_cohort_assignment("c1", {"members": eids[:1]})
    res = kpi.compare_to_average(ward, q("AVG_LOS", cohort_id="c1"), SETTINGS)
    cv, cn = one_value(res["cohort"])
    hv, hn = one_value(res["hospital"])
    assert hn == 2 and hv == 5.5
    assert cn == 1 and cv in (9.0, 2.0)
    with pytest.raises(kpi.KpiError):
        kpi.compare_to_average(ward, q("AVG_LOS"), SETTINGS)


def test_evaluate_tracked(ward):
    items = [
        {"item_id": "t1", "name": "los target", "kpi": "AVG_LOS",
         "from": "2015-03-01T00:00:00Z", "to": "2015-04-01T00:00:00Z",
         "target": 6.0, "direction": "AT_MOST"},
        {"item_id": "t2", "kpi": "MORTALITY_RATE",
         "from": "2015-03-01T00:00:00Z", "to": "2015-04-01T00:00:00Z",
         "target": 0.1, "direction": "AT_MOST"},
    ]
    out = kpi.evaluate_tracked(ward, items, now=utc(2015, 4, 15), settings=SETTINGS)
    by_id = {o["item_id"]: o for o in out}
    assert by_id["t1"]["status"] == "ON_TRACK"
    assert by_id["t1"]["current_value"] == 5.5
    assert by_id["t1"]["current_bucket"] == "2015-03-01T00:00:00Z"
    assert by_id["t2"]["status"] == "AT_RISK"
    # before the month completes there is no current value yet
    early = kpi.evaluate_tracked(ward, items, now=utc(2015, 3, 20), settings=SETTINGS)
    assert early[0]["value_absent"] is True
    assert early[0]["status"] == "AT_RISK"
