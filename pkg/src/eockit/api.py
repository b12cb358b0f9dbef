"""HTTP service over the repository: KPI series, cohorts, episodes, tracked
items, ingestion control.

Every successful body is the canonical JSON serialization of the
corresponding engine result, so API responses are byte-comparable with
direct engine calls. Every error body has the shape
{"status", "code", "message", "offset"?}.

No authentication; binds to loopback by default. Not for deployment beyond
a desk-scale installation.
"""
from __future__ import annotations

import threading
from datetime import datetime, timezone
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware

from . import builder, classifier, extractor, filterlang, kpi
from .config import PlatformConfig
from .model import ValidationError, canonical_json, format_instant, parse_instant
from .repository import EpisodeFilterQuery, QueryError, Repository


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str,
                 offset: Optional[int] = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.offset = offset

    def to_doc(self) -> dict:
        doc = {"status": self.status, "code": self.code, "message": self.message}
        if self.offset is not None:
            doc["offset"] = self.offset
        return doc


def _json(payload, status: int = 200) -> Response:
    return Response(content=canonical_json(payload), status_code=status,
                    media_type="application/json")


def _instant(params, name: str) -> datetime:
    raw = params.get(name)
    if raw is None:
        raise ApiError(400, "missing_parameter", f"query parameter {name!r} is required")
    try:
        return parse_instant(raw)
    except ValidationError as ex:
        raise ApiError(400, "bad_parameter", f"{name}: {ex}")


def _parse_filter(text: Optional[str]):
    if not text:
        return None
    try:
        filterlang.parse(text)
    except filterlang.FilterSyntaxError as ex:
        raise ApiError(400, "filter_syntax_error", str(ex), offset=ex.offset)
    except filterlang.FilterSemanticError as ex:
        raise ApiError(400, "filter_semantic_error", str(ex), offset=ex.offset)
    return text


def _kpi_query(kpi_type: str, params, allow_cohort=True) -> kpi.KpiQuery:
    if kpi_type not in kpi.KPI_TYPES:
        raise ApiError(404, "unknown_kpi", f"unknown KPI type {kpi_type!r}")
    t0 = _instant(params, "from")
    t1 = _instant(params, "to")
    if t0 >= t1:
        raise ApiError(422, "bad_window", "from must be earlier than to")
    bucket = params.get("bucket", "MONTH").upper()
    if bucket not in kpi.BUCKETS:
        raise ApiError(400, "bad_parameter", f"unknown bucket {bucket!r}")
    group_by = tuple(g for g in (params.get("group_by", "").split(",")) if g)
    for g in group_by:
        if g not in kpi.GROUP_FIELDS:
            raise ApiError(400, "bad_parameter", f"unknown group_by field {g!r}")
    filter_text = _parse_filter(params.get("filter"))
    cohort = params.get("cohort") if allow_cohort else None
    try:
        return kpi.KpiQuery(kpi=kpi_type, time_from=t0, time_to=t1, bucket=bucket,
                            group_by=group_by, filter_text=filter_text,
                            cohort_id=cohort)
    except kpi.KpiError as ex:
        raise ApiError(422, "bad_query", str(ex))


def create_app(config: PlatformConfig, repo: Optional[Repository] = None) -> FastAPI:
    app = FastAPI(title="episode-of-care analytics", docs_url=None, redoc_url=None)
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    state = {
        "repo": repo or Repository.open(config.repository_root, "rw"),
        "last_ingest": None,
        "ingest_lock": threading.Lock(),
    }
    app.state.eoc = state
    settings = config.kpi_settings

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return _json(exc.to_doc(), exc.status)

    def run(fn):
        """Translate engine errors into ApiError while executing fn()."""
        try:
            return fn()
        except QueryError as ex:
            raise ApiError(404, "unknown_cohort", str(ex))
        except (filterlang.FilterSyntaxError, filterlang.FilterSemanticError) as ex:
            raise ApiError(400, "filter_error", str(ex), offset=ex.offset)
        except kpi.ForecastError as ex:
            raise ApiError(422, "forecast_error", str(ex))
        except (kpi.KpiError, classifier.CohortError) as ex:
            raise ApiError(422, "bad_query", str(ex))
        except ValidationError as ex:
            raise ApiError(400, "validation_error", str(ex))

    @app.get("/kpis")
    def list_kpis():
        out = []
        for name in kpi.KPI_TYPES:
            unit, valid_range, formula = kpi.KPI_INFO[name]
            out.append({"id": name, "unit": unit,
                        "valid_range": list(valid_range), "formula_doc": formula})
        return _json(out)

    @app.get("/kpi/{kpi_type}/forecast")
    def kpi_forecast(kpi_type: str, request: Request):
        params = request.query_params
        q = _kpi_query(kpi_type, params)
        try:
            horizon = int(params.get("horizon", "0"))
        except ValueError:
            raise ApiError(400, "bad_parameter", "horizon must be an integer")
        if horizon < 1:
            raise ApiError(422, "bad_horizon", "horizon must be >= 1")
        try:
            scenario = float(params.get("scenario", "1.0"))
        except ValueError:
            raise ApiError(400, "bad_parameter", "scenario must be a number")
        result = run(lambda: kpi.forecast(state["repo"], q, horizon, scenario,
                                          settings))
        return _json(result)

    @app.get("/kpi/{kpi_type}/compare")
    def kpi_compare(kpi_type: str, request: Request):
        q = _kpi_query(kpi_type, request.query_params)
        if q.cohort_id is None:
            raise ApiError(400, "missing_parameter", "cohort parameter is required")
        return _json(run(lambda: kpi.compare_to_average(state["repo"], q, settings)))

    @app.get("/kpi/{kpi_type}")
    def kpi_series(kpi_type: str, request: Request):
        q = _kpi_query(kpi_type, request.query_params)
        return _json(run(lambda: kpi.compute_kpi(state["repo"], q, settings)))

    @app.get("/cohorts")
    def list_cohorts():
        defs = state["repo"].cohort_defs()
        return _json([defs[k] for k in sorted(defs)])

    @app.post("/cohorts")
    async def create_cohort(request: Request):
        body = await request.json()
        cohort_id = body.get("cohort_id")
        if not cohort_id:
            raise ApiError(400, "bad_cohort", "cohort_id is required")
        if cohort_id in state["repo"].cohort_defs():
            raise ApiError(409, "duplicate_cohort", f"cohort {cohort_id!r} exists")
        kind = body.get("kind")
        try:
            if kind == "RULE":
                classifier.CohortDef(cohort_id=cohort_id,
                                     name=body.get("name", cohort_id),
                                     kind="RULE", rule_text=body.get("rule_text"))
            elif kind == "CLUSTER":
                params = body.get("cluster_params") or {}
                classifier.CohortDef(cohort_id=cohort_id,
                                     name=body.get("name", cohort_id),
                                     kind="CLUSTER",
                                     cluster_k=params.get("k"),
                                     cluster_seed=params.get("seed", 0))
            else:
                raise ApiError(400, "bad_cohort", f"unknown cohort kind {kind!r}")
        except (classifier.CohortError, filterlang.FilterError) as ex:
            raise ApiError(400, "bad_cohort", str(ex),
                           offset=getattr(ex, "offset", None))
        state["repo"].put_cohort_def(cohort_id, body)
        return _json(body, 201)

    @app.post("/cohorts/{cohort_id}/materialize")
    def materialize_cohort(cohort_id: str):
        repo = state["repo"]
        defs = repo.cohort_defs()
        if cohort_id not in defs:
            raise ApiError(404, "unknown_cohort", f"unknown cohort {cohort_id!r}")
        body = defs[cohort_id]
        episodes = repo.list_episodes()
        patients = repo.patients()

        def go():
            if body["kind"] == "RULE":
                cdef = classifier.CohortDef(cohort_id=cohort_id,
                                            name=body.get("name", cohort_id),
                                            kind="RULE",
                                            rule_text=body.get("rule_text"))
                a = classifier.assign_rule_cohort(cdef, episodes, patients)
                repo.put_cohort_assignment(cohort_id, {"members": list(a.members)})
                summary = classifier.cohort_summary(a, episodes)
                return [summary]
            params = body.get("cluster_params") or {}
            cdef = classifier.CohortDef(cohort_id=cohort_id,
                                        name=body.get("name", cohort_id),
                                        kind="CLUSTER",
                                        cluster_k=params.get("k"),
                                        cluster_seed=params.get("seed", 0))
            out = []
            for a in classifier.cluster_by_los(cdef, episodes):
                repo.put_cohort_assignment(a.cohort_id, {
                    "members": list(a.members), "centroid": a.centroid})
                summary = classifier.cohort_summary(a, episodes)
                summary["centroid_los_days"] = a.centroid
                out.append(summary)
            return out

        return _json(run(go))

    @app.get("/episodes/{episode_id}")
    def get_episode(episode_id: str):
        doc = state["repo"].episode_document(episode_id)
        if doc is None:
            raise ApiError(404, "unknown_episode", f"no episode {episode_id!r}")
        return Response(content=doc, media_type="application/json")

    @app.get("/episodes")
    def query_episodes(request: Request):
        params = request.query_params
        t0 = _instant(params, "from")
        t1 = _instant(params, "to")
        if t0 >= t1:
            raise ApiError(422, "bad_window", "from must be earlier than to")
        filter_text = _parse_filter(params.get("filter"))
        ast = filterlang.parse(filter_text) if filter_text else None
        limit = None
        if params.get("limit"):
            try:
                limit = int(params["limit"])
            except ValueError:
                raise ApiError(400, "bad_parameter", "limit must be an integer")
        q = EpisodeFilterQuery(time_from=t0, time_to=t1, filter_ast=ast,
                               cohort_id=params.get("cohort"))
        eps = run(lambda: state["repo"].query_episodes(q))
        if limit is not None:
            eps = eps[:limit]
        from .model import episode_to_doc
        return _json([episode_to_doc(e) for e in eps])

    @app.get("/tracked")
    def list_tracked():
        return _json(state["repo"].tracked_items())

    @app.post("/tracked")
    async def create_tracked(request: Request):
        body = await request.json()
        for key in ("item_id", "kpi", "from", "to", "target", "direction"):
            if key not in body:
                raise ApiError(400, "bad_tracked_item", f"missing field {key!r}")
        if body["direction"] not in ("AT_MOST", "AT_LEAST"):
            raise ApiError(400, "bad_tracked_item", "direction must be AT_MOST or AT_LEAST")
        if body["kpi"] not in kpi.KPI_TYPES:
            raise ApiError(404, "unknown_kpi", f"unknown KPI type {body['kpi']!r}")
        items = state["repo"].tracked_items()
        if any(i["item_id"] == body["item_id"] for i in items):
            raise ApiError(409, "duplicate_item", f"item {body['item_id']!r} exists")
        items.append(body)
        state["repo"].put_tracked_items(items)
        return _json(body, 201)

    @app.get("/tracked/status")
    def tracked_status(request: Request):
        now_param = request.query_params.get("now")
        now = parse_instant(now_param) if now_param else datetime.now(timezone.utc)
        items = state["repo"].tracked_items()
        return _json(run(lambda: kpi.evaluate_tracked(state["repo"], items, now,
                                                      settings)))

    @app.post("/ingest/run")
    def ingest_run():
        if not state["ingest_lock"].acquire(blocking=False):
            raise ApiError(409, "ingest_running", "an ingest run is in progress")
        try:
            report = extractor.load_increment(list(config.sources), state["repo"],
                                              config.linkage)
            builder.apply_increment(state["repo"], config.linkage)
            state["last_ingest"] = format_instant(datetime.now(timezone.utc))
        finally:
            state["ingest_lock"].release()
        doc = report.to_doc()
        status = 500 if doc.get("errors") else 200
        return _json(doc, status)

    @app.get("/health")
    def health():
        return _json({
            "status": "ok",
            "last_ingest": state["last_ingest"],
            "episode_count": len(state["repo"].episode_ids()),
        })

    return app
