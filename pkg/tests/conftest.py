from __future__ import annotations

import json
import random
from pathlib import Path
from typing import Any

import pytest

from tmem.engine import Engine
from tmem.gateway import Gateway, HashingEmbedder, ScriptedProvider
from tmem.gateway.heuristic import HeuristicResponder
from tmem.models import Embedding, Granularity, Priority, Tip, TipCategory, Trajectory, validate_trajectory
from tmem.scenario import load_rules, run_scenario, scenario_engine
from tmem.store import MemoryStore

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"
TRAJECTORIES = FIXTURES / "trajectories"
RULES = FIXTURES / "scripted" / "rules.json"
SCRIPTED = FIXTURES / "scripted_provider.json"
GOLDEN = Path(__file__).resolve().parent / "golden"
CLOCK = "2025-02-01T09:00:00Z"


def raw_trajectory(name: str) -> dict[str, Any]:
    return json.loads((TRAJECTORIES / f"{name}.json").read_text(encoding="utf-8"))


def trajectory(name: str) -> Trajectory:
    return validate_trajectory(raw_trajectory(name))


def scripted_gateway(dim: int = 256) -> Gateway:
    return Gateway(ScriptedProvider.from_file(SCRIPTED), HashingEmbedder(dim))


def heuristic_gateway(dim: int = 256) -> Gateway:
    return Gateway(ScriptedProvider(responder=HeuristicResponder()), HashingEmbedder(dim))


def make_tip(
    tip_id: str,
    index_text: str,
    *,
    sources: tuple[str, ...] = ("t1",),
    category: TipCategory = TipCategory.STRATEGY,
    priority: Priority = Priority.MEDIUM,
    granularity: Granularity = Granularity.TASK,
    context: str | None = None,
    task_category: str | None = None,
    content: str | None = None,
    source_outcome: str = "clean_success",
    steps: tuple[str, ...] = (),
    embedder: HashingEmbedder | None = None,
    **extra: Any,
) -> Tip:
    embedder = embedder or HashingEmbedder(256)
    content = content or f"Tip about {index_text}"
    sub = index_text if granularity is Granularity.SUBTASK else None
    return Tip(
        id=tip_id,
        category=category,
        content=content,
        steps=steps,
        trigger=f"When {index_text}",
        application_context=context,
        task_category=task_category,
        priority=priority,
        granularity=granularity,
        subtask_description=extra.pop("subtask_description", sub),
        index_description=index_text,
        source_trajectory_ids=sources,
        source_outcome=source_outcome,
        embedding=embedder.embed(content),
        index_embedding=embedder.embed(index_text),
        created_at=CLOCK,
        **extra,
    )


def bare_trajectory(traj_id: str) -> Trajectory:
    return validate_trajectory(
        {
            "id": traj_id,
            "task_description": f"task {traj_id}",
            "created_at": CLOCK,
            "steps": [{"index": 0, "response": "done", "action": {"name": "supervisor.complete_task"}}],
        }
    )


def store_with_trajectories(ids: list[str], dim: int = 256, path: Path | None = None) -> MemoryStore:
    store = MemoryStore.open(path, embed_dim=dim)
    for i in ids:
        store.put_trajectory(bare_trajectory(i))
    return store


def random_vector(rng: random.Random, dim: int) -> Embedding:
    while True:
        vec = [rng.gauss(0.0, 1.0) for _ in range(dim)]
        if any(vec):
            return Embedding.normalized(vec)


@pytest.fixture(scope="session")
def scenario_rules():
    return load_rules(RULES)


def run_full_scenario(store_path: Path | None = None) -> tuple[Engine, dict[str, Any]]:
    scenario, _, base = load_rules(RULES)
    engine = scenario_engine(ScriptedProvider.from_file(SCRIPTED), scenario, store_path)
    return engine, run_scenario(engine, scenario, base)


@pytest.fixture(scope="session")
def scenario_run() -> tuple[Engine, dict[str, Any]]:
    """Full scripted scenario on an in-memory store; treat as read-only."""
    return run_full_scenario()


def load_fixture_payloads() -> dict[tuple[str, str], dict[str, Any]]:
    from tmem.gateway import load_fixture

    return load_fixture(SCRIPTED)


def run_scenario_via_service(client: Any) -> dict[str, Any]:
    """The scripted scenario driven through the HTTP API of ``client``.

    Same shape as the library outputs, except that the direct generalization
    probes (which have no endpoint) are left out.
    """
    scenario, _, base = load_rules(RULES)
    out: dict[str, Any] = {"ingested": [], "extractions": [], "retrievals": []}
    for rel in scenario.trajectories:
        raw = json.loads((base / rel).read_text(encoding="utf-8"))
        resp = client.post("/v1/trajectories", params={"extract": scenario.extract.value}, json=raw)
        assert resp.status_code == 201, resp.text
        body = resp.json()
        job_id = body.pop("job_id")
        out["ingested"].append({**body, "job_id": None})
        client.app.state.jobs.wait(job_id, timeout=60)
        job = client.get(f"/v1/jobs/{job_id}").json()
        assert job["state"] == "done", job
        out["extractions"].append(job["result"])
    resp = client.post("/v1/consolidate", json={"threshold": scenario.threshold})
    assert resp.status_code == 200, resp.text
    out["consolidation"] = resp.json()
    for query in scenario.queries:
        resp = client.post("/v1/retrieve", json=query.model_dump(mode="json"))
        assert resp.status_code == 200, resp.text
        out["retrievals"].append(resp.json())
    return out


def scenario_service_engine(store_path: Path | None = None) -> Engine:
    scenario, _, _ = load_rules(RULES)
    return scenario_engine(ScriptedProvider.from_file(SCRIPTED), scenario, store_path)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter: Any) -> None:
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
