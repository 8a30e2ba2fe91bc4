"""Scripted end-to-end runs and compilation of the scripted-provider fixture.

A scenario lists trajectory files, the extraction mode, the consolidation
threshold, a fixed clock and the retrieval queries to run. Authoring rules
(``{"role", "when", "payload"}``) pin the model answers that matter; every
other request is answered by :class:`HeuristicResponder`. Compiling records
each answered request under its ``(role, sha256(prompt))`` key, which is the
format :class:`ScriptedProvider` replays.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field

from tmem import errors
from tmem.curation import EntityLexicon, generalize_description
from tmem.engine import Engine, ExtractMode, RetrieveRequest
from tmem.gateway import Gateway, HashingEmbedder, RecordingProvider, RuleResponder, ScriptedProvider
from tmem.gateway.heuristic import HeuristicResponder
from tmem.models import fixed_clock
from tmem.store import MemoryStore


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    trajectories: list[str]
    extract: ExtractMode = ExtractMode.BOTH
    threshold: float = Field(0.85, gt=0.0, le=1.0)
    clock: str
    embed_dim: int = 256
    generalize: list[str] = Field(default_factory=list)
    queries: list[RetrieveRequest] = Field(default_factory=list)


def load_rules(path: str | Path) -> tuple[Scenario, list[dict[str, Any]], Path]:
    """Scenario, authoring rules and the directory trajectory paths are relative to."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    return Scenario.model_validate(doc["scenario"]), list(doc.get("rules", [])), path.parent


def run_scenario(engine: Engine, scenario: Scenario, base: str | Path) -> dict[str, Any]:
    """Ingest, extract, consolidate, then answer every query. Returns JSON-ready outputs."""
    base = Path(base)
    out: dict[str, Any] = {"ingested": [], "extractions": [], "generalized": {}, "retrievals": []}
    for rel in scenario.trajectories:
        raw = json.loads((base / rel).read_text(encoding="utf-8"))
        ingest = engine.ingest(raw)
        out["ingested"].append(ingest.model_dump(mode="json"))
        out["extractions"].append(engine.extract(ingest.id, scenario.extract).model_dump(mode="json"))
    lexicon = EntityLexicon.from_store(engine.store.snapshot())
    for text in scenario.generalize:
        out["generalized"][text] = generalize_description(text, engine.gateway, lexicon)
    out["consolidation"] = engine.consolidate(scenario.threshold).model_dump(mode="json")
    for query in scenario.queries:
        out["retrievals"].append(engine.retrieve(query).model_dump(mode="json"))
    return out


def scenario_engine(
    provider: Any, scenario: Scenario, store_path: str | Path | None = None
) -> Engine:
    gateway = Gateway(provider, HashingEmbedder(scenario.embed_dim))
    store = MemoryStore.open(store_path, embed_dim=scenario.embed_dim)
    return Engine(store, gateway, clock=fixed_clock(scenario.clock), threshold=scenario.threshold)


def compile_fixture(rules_path: str | Path) -> dict[tuple[str, str], dict[str, Any]]:
    """Run the scenario against the rules and return the recorded payloads."""
    scenario, rules, base = load_rules(rules_path)
    responder = RuleResponder(rules, fallback=HeuristicResponder())
    recorder = RecordingProvider(ScriptedProvider(responder=responder))
    engine = scenario_engine(recorder, scenario)
    try:
        run_scenario(engine, scenario, base)
    finally:
        engine.close()
    unused = responder.unused_rules()
    if unused:
        raise errors.ConfigError(f"authoring rules never matched: {unused}")
    return recorder.entries
