"""HTTP API: byte-differential against direct engine calls, error shapes."""
import json

import pytest
from fastapi.testclient import TestClient

from eockit import kpi
from eockit.api import create_app
from eockit.builder import LinkagePolicy
from eockit.config import PlatformConfig
from eockit.model import canonical_json, utc
from tests.conftest import WARD_EVENTS

SETTINGS = kpi.KpiSettings(bed_capacity=10)
WINDOW = {"from": "2015-03-01T00:00:00Z", "to": "2015-04-01T00:00:00Z"}


@pytest.fixture()
def client(ward):
    config = PlatformConfig(repository_root=ward.root, sources=(),
                            linkage=LinkagePolicy(), kpi_settings=SETTINGS)
    app = create_app(config, repo=ward)
    with TestClient(app) as c:
        yield c, ward


def test_kpi_body_byte_equal_to_engine(client):
    c, repo = client
    for kpi_type in kpi.KPI_TYPES:
        for params in (WINDOW,
                       {**WINDOW, "bucket": "WEEK", "group_by": "gender"},
                       {**WINDOW, "bucket": "DAY",
                        "group_by": "department,age_band"},
                       {**WINDOW, "filter": 'department = "cardiology"'}):
            r = c.get(f"/kpi/{kpi_type}", params=params)
            assert r.status_code == 200, r.text
            q = kpi.KpiQuery(
                kpi=kpi_type,
                time_from=utc(2015, 3, 1), time_to=utc(2015, 4, 1),
                bucket=params.get("bucket", "MONTH"),
                group_by=tuple(g for g in params.get("group_by", "").split(",") if g),
                filter_text=params.get("filter"))
            want = canonical_json(kpi.compute_kpi(repo, q, SETTINGS))
            assert r.content.decode("utf-8") == want


def test_kpis_catalog(client):
    c, _ = client
    r = c.get("/kpis")
    assert r.status_code == 200
    body = json.loads(r.content)
    assert [d["id"] for d in body] == list(kpi.KPI_TYPES)
    for d in body:
        assert set(d) == {"id", "unit", "valid_range", "formula_doc"}
        assert len(d["valid_range"]) == 2


def test_error_shapes(client):
    c, _ = client
    r = c.get("/kpi/NOPE", params=WINDOW)
    assert r.status_code == 404
    body = json.loads(r.content)
    assert body["status"] == 404 and body["code"] == "unknown_kpi"
    r = c.get("/kpi/AVG_LOS", params={**WINDOW, "filter": "los >= "})
    assert r.status_code == 400
    body = json.loads(r.content)
    assert body["code"] == "filter_syntax_error"
    assert body["offset"] == 7
    r = c.get("/kpi/AVG_LOS", params={"from": WINDOW["to"], "to": WINDOW["from"]})
    assert r.status_code == 422
    r = c.get("/kpi/AVG_LOS", params={"from": WINDOW["from"]})
    assert r.status_code == 400
    assert json.loads(r.content)["code"] == "missing_parameter"
    r = c.get("/kpi/AVG_LOS", params={**WINDOW, "cohort": "ghost"})
    assert r.status_code == 404
    assert json.loads(r.content)["code"] == "unknown_cohort"


def test_episode_endpoints(client):
    c, repo = client
    eid = sorted(repo.episode_ids())[0]
    r = c.get(f"/episodes/{eid}")
    assert r.status_code == 200
    # the body is exactly the stored document bytes
    assert r.content == repo.episode_document(eid)
    assert c.get("/episodes/ep-missing").status_code == 404
    r = c.get("/episodes", params={**WINDOW,
                                   "filter": 'department = "cardiology" AND '
                                             'procedure = "stent" AND los >= 7'})
    assert r.status_code == 200
    eps = json.loads(r.content)
    assert len(eps) == 1
    assert eps[0]["patient_id"] == "P1"
    r = c.get("/episodes", params={**WINDOW, "limit": "0"})
    assert json.loads(r.content) == []


def test_cohort_lifecycle_and_409(client):
    c, repo = client
    body = {"cohort_id": "card", "name": "cardiology", "kind": "RULE",
            "rule_text": 'department = "cardiology"'}
    r = c.post("/cohorts", json=body)
    assert r.status_code == 201
    r = c.post("/cohorts", json=body)
    assert r.status_code == 409
    assert json.loads(r.content)["code"] == "duplicate_cohort"
    r = c.post("/cohorts", json={"cohort_id": "bad", "kind": "RULE",
                                 "rule_text": "los >= "})
    assert r.status_code == 400
    assert json.loads(r.content)["offset"] == 7
    r = c.post("/cohorts/card/materialize")
    assert r.status_code == 200
    (summary,) = json.loads(r.content)
    assert summary["count"] == 1
    assert summary["mean_los_days"] == 9.0
    r = c.get("/cohorts")
    assert [d["cohort_id"] for d in json.loads(r.content)] == ["card"]
    # materialized cohorts are queryable
    r = c.get("/kpi/AVG_LOS", params={**WINDOW, "cohort": "card"})
    assert json.loads(r.content)["buckets"][0]["strata"]["all"]["value"] == 9.0
    assert c.post("/cohorts/ghost/materialize").status_code == 404


def test_cluster_cohort_materialize(client):
    c, _ = client
    r = c.post("/cohorts", json={"cohort_id": "los", "kind": "CLUSTER",
                                 "cluster_params": {"k": 2, "seed": 7}})
    assert r.status_code == 201
    r = c.post("/cohorts/los/materialize")
    assert r.status_code == 200
    out = json.loads(r.content)
    assert [o["cohort_id"] for o in out] == ["los-0", "los-1"]
    assert out[0]["centroid_los_days"] < out[1]["centroid_los_days"]


def test_compare_endpoint(client):
    c, repo = client
    c.post("/cohorts", json={"cohort_id": "card", "kind": "RULE",
                             "rule_text": 'department = "cardiology"'})
    c.post("/cohorts/card/materialize")
    r = c.get("/kpi/AVG_LOS/compare", params={**WINDOW, "cohort": "card"})
    assert r.status_code == 200
    q = kpi.KpiQuery(kpi="AVG_LOS", time_from=utc(2015, 3, 1),
                     time_to=utc(2015, 4, 1), cohort_id="card")
    want = canonical_json(kpi.compare_to_average(repo, q, SETTINGS))
    assert r.content.decode("utf-8") == want
    assert c.get("/kpi/AVG_LOS/compare", params=WINDOW).status_code == 400


def test_forecast_endpoint_errors(client):
    c, _ = client
    r = c.get("/kpi/REVENUE/forecast", params={**WINDOW, "horizon": "0"})
    assert r.status_code == 422
    r = c.get("/kpi/REVENUE/forecast", params={**WINDOW, "horizon": "2"})
    assert r.status_code == 422  # only one month of history
    assert json.loads(r.content)["code"] == "forecast_error"


def test_tracked_endpoints(client):
    c, repo = client
    item = {"item_id": "t1", "name": "los", "kpi": "AVG_LOS",
            "from": WINDOW["from"], "to": WINDOW["to"],
            "target": 6.0, "direction": "AT_MOST"}
    assert c.post("/tracked", json=item).status_code == 201
    assert c.post("/tracked", json=item).status_code == 409
    assert c.post("/tracked", json={**item, "item_id": "t2",
                                    "direction": "SIDEWAYS"}).status_code == 400
    r = c.get("/tracked/status", params={"now": "2015-04-15T00:00:00Z"})
    assert r.status_code == 200
    want = canonical_json(kpi.evaluate_tracked(
        repo, repo.tracked_items(), utc(2015, 4, 15), SETTINGS))
    assert r.content.decode("utf-8") == want
    (status,) = json.loads(r.content)
    assert status["status"] == "ON_TRACK"


def test_health(client):
    c, repo = client
    r = c.get("/health")
    body = json.loads(r.content)
    assert body["status"] == "ok"
    assert body["episode_count"] == len(repo.episode_ids())
    assert body["last_ingest"] is None


def test_cors_header(client):
    c, _ = client
    r = c.get("/kpis", headers={"Origin": "http://localhost:5173"})
    assert r.headers.get("access-control-allow-origin") == "*"


def test_ingest_endpoint_and_freshness(tmp_path):
    """POST /ingest/run picks up new source rows; subsequent queries reflect
    them immediately."""
    import os
    from eockit.extractor import SourceConfig

    data = tmp_path / "data"
    data.mkdir()
    adt = data / "adt.csv"
    adt.write_text(
        "id,paciente,atendimento,tipo,data,setor,nascimento,sexo\n"
        "a1,P1,E1,ADMISSAO,01/03/2015 08:00,icu,01/01/1970,M\n")
    from eockit.repository import Repository
    repo = Repository.open(str(tmp_path / "repo"), "rw")
    config = PlatformConfig(
        repository_root=repo.root,
        sources=(SourceConfig("adt", str(adt), "CSV", "adt_ptbr", "ADT"),),
        linkage=LinkagePolicy(), kpi_settings=SETTINGS)
    app = create_app(config, repo=repo)
    with TestClient(app) as c:
        r = c.post("/ingest/run")
        assert r.status_code == 200
        assert json.loads(r.content)["sources"]["adt"]["upserted"] == 1
        r = c.get("/kpi/ADMISSION_COUNT", params=WINDOW)
        assert json.loads(r.content)["buckets"][0]["strata"]["all"]["value"] == 1.0
        # append a row, re-ingest, and the series moves
        with open(adt, "a") as f:
            f.write("a2,P2,E2,ADMISSAO,02/03/2015 09:00,er,02/02/1980,F\n")
        c.post("/ingest/run")
        r = c.get("/kpi/ADMISSION_COUNT", params=WINDOW)
        assert json.loads(r.content)["buckets"][0]["strata"]["all"]["value"] == 2.0
        assert json.loads(c.get("/health").content)["last_ingest"] is not None
    repo.close()
