from __future__ import annotations

import json
from collections import Counter

import pytest
from fastapi.testclient import TestClient
from jsonschema import Draft202012Validator

from conftest import (
    heuristic_gateway,
    raw_trajectory,
    run_scenario_via_service,
    scenario_service_engine,
)
from tmem import errors
from tmem.engine import Engine, RetrieveRequest
from tmem.retrieval import RetrievalResult, render_guidelines
from tmem.service import create_app, status_for
from tmem.store import MemoryStore


@pytest.fixture(scope="module")
def scenario_client():
    """Service that has run the whole scripted scenario; treat as read-only."""
    engine = scenario_service_engine()
    with TestClient(create_app(engine)) as client:
        client.outputs = run_scenario_via_service(client)
        yield client


@pytest.fixture()
def empty_client():
    engine = Engine(MemoryStore.open(None, embed_dim=256), heuristic_gateway())
    with TestClient(create_app(engine)) as client:
        yield client


def _validator(client: TestClient, name: str) -> Draft202012Validator:
    doc = client.get("/openapi.json").json()
    schema = {"$ref": f"#/components/schemas/{name}", "components": doc["components"]}
    Draft202012Validator.check_schema(schema)
    return Draft202012Validator(schema)


# -- equivalence with the library ------------------------------------------------------------


def test_service_run_equals_library_run(scenario_client, scenario_run):
    _, library = scenario_run
    service = scenario_client.outputs
    assert service["ingested"] == library["ingested"]
    assert service["extractions"] == library["extractions"]
    assert service["consolidation"] == library["consolidation"]
    assert service["retrievals"] == library["retrievals"]


def test_store_contents_equal_library(scenario_client, scenario_run):
    engine, _ = scenario_run
    exported = scenario_client.get("/v1/export")
    assert exported.headers["content-type"].startswith("application/x-ndjson")
    assert exported.text == "".join(line + "\n" for line in engine.export_jsonl())


# -- responses and schemas -------------------------------------------------------------------


@pytest.mark.parametrize(
    "path,method,body,schema",
    [
        ("/v1/retrieve", "post", {"task_description": "Pay my pending Venmo requests"}, "RetrieveResponse"),
        ("/v1/stats", "get", None, "StatsResponse"),
        ("/v1/tips", "get", None, "TipList"),
    ],
)
def test_responses_validate_against_openapi(scenario_client, path, method, body, schema):
    resp = getattr(scenario_client, method)(path, **({"json": body} if body is not None else {}))
    assert resp.status_code == 200
    errors_ = list(_validator(scenario_client, schema).iter_errors(resp.json()))
    assert errors_ == []


def test_tip_and_report_validate_against_openapi(scenario_client):
    tip_id = scenario_client.get("/v1/tips").json()["tips"][0]["id"]
    tip = scenario_client.get(f"/v1/tips/{tip_id}").json()
    assert list(_validator(scenario_client, "Tip").iter_errors(tip)) == []
    report = scenario_client.outputs["consolidation"]
    assert list(_validator(scenario_client, "ConsolidationReport").iter_errors(report)) == []


def test_retrieve_defaults_and_rendered(scenario_client):
    body = scenario_client.post("/v1/retrieve", json={"task_description": "Pay my pending Venmo requests"}).json()
    engine: Engine = scenario_client.app.state.engine
    direct = engine.retrieve(RetrieveRequest(task_description="Pay my pending Venmo requests", tau=0.6, k=5))
    assert body == json.loads(direct.model_dump_json())
    result = RetrievalResult.model_validate({k: v for k, v in body.items() if k != "rendered"})
    assert body["rendered"] == render_guidelines(result)
    assert len(body["tips"]) <= 5 and all(t["score"] >= 0.6 for t in body["tips"])


@pytest.mark.parametrize(
    "body",
    [
        {"task_description": "x", "k": 0},
        {"task_description": "x", "tau": 0},
        {"task_description": "x", "tau": 1.5},
        {"task_description": "x", "strategy": "nearest"},
        {"task_description": "x", "extra": 1},
        {},
    ],
)
def test_retrieve_rejects_bad_parameters(scenario_client, body):
    assert scenario_client.post("/v1/retrieve", json=body).status_code == 422


def test_empty_task_description_is_400(scenario_client):
    resp = scenario_client.post("/v1/retrieve", json={"task_description": "  "})
    assert resp.status_code == 400
    assert resp.json()["error"] == "EmptyQuery"


def test_stats_match_a_recount(scenario_client):
    stats = scenario_client.get("/v1/stats").json()
    tips = scenario_client.get("/v1/tips").json()
    assert stats["tips"] == tips["count"] == len(tips["tips"])
    assert stats["by_category"] == {k: Counter(t["category"] for t in tips["tips"])[k] for k in stats["by_category"]}
    assert stats["by_granularity"] == {k: Counter(t["granularity"] for t in tips["tips"])[k] for k in stats["by_granularity"]}
    assert stats["revision"] == tips["revision"]


def test_tip_filters(scenario_client):
    subtask = scenario_client.get("/v1/tips", params={"granularity": "subtask"}).json()
    assert subtask["count"] > 0 and all(t["granularity"] == "subtask" for t in subtask["tips"])
    generic = scenario_client.get("/v1/tips", params={"generic_only": True}).json()
    assert all(t["application_context"] is None for t in generic["tips"])
    assert scenario_client.get("/v1/tips", params={"category": "bogus"}).status_code == 422


def test_unknown_ids_are_404(scenario_client):
    for path in ("/v1/tips/nope", "/v1/jobs/nope"):
        resp = scenario_client.get(path)
        assert resp.status_code == 404
        assert resp.json()["error"] == "UnknownId"


# -- writes ----------------------------------------------------------------------------------


def test_ingest_duplicate_and_invalid(empty_client):
    raw = raw_trajectory("spotify_top_artist")
    first = empty_client.post("/v1/trajectories", json=raw)
    assert first.status_code == 201 and first.json()["job_id"] is None
    dup = empty_client.post("/v1/trajectories", json=raw)
    assert dup.status_code == 409 and dup.json()["error"] == "DuplicateId"
    bad = empty_client.post("/v1/trajectories", json={"id": "x", "steps": []})
    assert bad.status_code == 400
    assert empty_client.post("/v1/trajectories", params={"extract": "all"}, json=raw).status_code == 422


def test_extraction_job_lifecycle(empty_client):
    raw = raw_trajectory("spotify_top_artist")
    body = empty_client.post("/v1/trajectories", params={"extract": "both"}, json=raw).json()
    empty_client.app.state.jobs.wait(body["job_id"], timeout=60)
    job = empty_client.get(f"/v1/jobs/{body['job_id']}").json()
    assert job["state"] == "done"
    assert job["result"]["tip_count"] == empty_client.get("/v1/stats").json()["tips"] > 0


def test_failed_job_reports_the_error():
    engine = scenario_service_engine()
    with TestClient(create_app(engine)) as client:
        # a task the fixture has never seen makes every completion miss
        raw = dict(raw_trajectory("spotify_top_artist"), task_description="Water the office plants")
        body = client.post("/v1/trajectories", params={"extract": "both"}, json=raw).json()
        client.app.state.jobs.wait(body["job_id"], timeout=60)
        job = client.get(f"/v1/jobs/{body['job_id']}").json()
    assert job["state"] == "failed"
    assert job["error"].startswith("ScriptedMiss")


def test_consolidate_on_empty_store(empty_client):
    before = empty_client.get("/v1/stats").json()["revision"]
    report = empty_client.post("/v1/consolidate").json()
    assert report["tips_before"] == report["tips_after"] == 0
    assert report["revision_after"] == before
    assert empty_client.post("/v1/consolidate", json={"threshold": 1.2}).status_code == 422


@pytest.mark.parametrize(
    "exc,code",
    [
        (errors.DuplicateId("x"), 409),
        (errors.Busy("x"), 409),
        (errors.UnknownId("x"), 404),
        (errors.EmptyQuery("x"), 400),
        (errors.StoreIoError("x"), 500),
        (errors.DanglingProvenance("x"), 400),
        (errors.ProviderUnavailable("x"), 502),
        (errors.ScriptedMiss("x"), 502),
        (errors.ProvenanceLoss("x"), 400),
        (RuntimeError("x"), 500),
    ],
)
def test_status_mapping(exc, code):
    assert status_for(exc) == code
