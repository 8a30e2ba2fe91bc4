"""Library facade shared by the HTTP service and the CLI.

Request and response models live here so both front ends speak exactly the
same JSON.
"""

from __future__ import annotations

import json
import threading
from collections.abc import Iterator, Mapping
from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field

from tmem import errors
from tmem.config import Settings
from tmem.curation import ConsolidationReport, run_consolidation
from tmem.extraction import (
    attribute_decisions,
    extract_intelligence,
    generate_subtask_tips,
    generate_task_tips,
    segment_subtasks,
)
from tmem.gateway import Gateway
from tmem.models import (
    Clock,
    Granularity,
    OutcomeClassification,
    Priority,
    Tip,
    TipCategory,
    Trajectory,
    utc_now,
    validate_trajectory,
)
from tmem.retrieval import (
    DEFAULT_K,
    DEFAULT_TAU,
    RetrievalConfig,
    RetrievedTip,
    Selection,
    Strategy,
    render_guidelines,
    retrieve,
)
from tmem.store import MemoryStore, MetadataFilter


class ExtractMode(str, Enum):
    TASK = "task"
    SUBTASK = "subtask"
    BOTH = "both"


class IngestResponse(BaseModel):
    id: str
    revision: int
    job_id: Optional[str] = None


class ExtractionSummary(BaseModel):
    trajectory_id: str
    mode: ExtractMode
    outcome: OutcomeClassification
    attributions: int
    subtasks: int
    task_tip_ids: list[str]
    subtask_tip_ids: list[str]
    tip_count: int
    revision: int


class RetrieveRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task_description: str
    strategy: Strategy = Strategy.COSINE
    tau: float = Field(DEFAULT_TAU, gt=0.0, le=1.0)
    k: int = Field(DEFAULT_K, ge=1)
    granularities: Optional[list[Granularity]] = None


class RetrieveResponse(BaseModel):
    tips: list[RetrievedTip]
    strategy_used: str
    query_text: str
    selection: Optional[Selection] = None
    warnings: list[str] = Field(default_factory=list)
    rendered: str


class ConsolidateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    threshold: Optional[float] = Field(None, gt=0.0, le=1.0)


class TipList(BaseModel):
    revision: int
    count: int
    tips: list[Tip]


class StatsResponse(BaseModel):
    revision: int
    trajectories: int
    tips: int
    clusters: int
    by_category: dict[str, int]
    by_priority: dict[str, int]
    by_granularity: dict[str, int]


class Engine:
    """Ingest, extract, consolidate and retrieve against one store."""

    def __init__(
        self,
        store: MemoryStore,
        gateway: Gateway,
        *,
        clock: Clock = utc_now,
        step_cap: int = 30,
        threshold: float = 0.85,
        cluster_task_tips: bool = True,
        llm_tau_floor: bool = True,
    ) -> None:
        self.store = store
        self.gateway = gateway
        self.clock = clock
        self.step_cap = step_cap
        self.threshold = threshold
        self.cluster_task_tips = cluster_task_tips
        self.llm_tau_floor = llm_tau_floor
        self._consolidating = threading.Lock()

    @classmethod
    def from_settings(cls, settings: Settings, *, readonly: bool = False) -> Engine:
        gateway = settings.make_gateway()
        store = MemoryStore.open(
            settings.store,
            embed_dim=gateway.dim,
            readonly=readonly,
            checkpoint_every=settings.checkpoint_every,
        )
        return cls(
            store,
            gateway,
            clock=settings.make_clock(),
            step_cap=settings.step_cap,
            threshold=settings.threshold,
            cluster_task_tips=settings.cluster_task_tips,
            llm_tau_floor=settings.llm_tau_floor,
        )

    def close(self) -> None:
        self.store.close()

    # -- ingestion and extraction -----------------------------------------------------------

    def validate(self, raw: Mapping[str, Any] | Trajectory) -> Trajectory:
        return validate_trajectory(
            raw,
            step_cap=self.step_cap,
            existing_ids=self.store.snapshot().trajectories,
            clock=self.clock,
        )

    def ingest(self, raw: Mapping[str, Any] | Trajectory) -> IngestResponse:
        traj = self.validate(raw)
        revision = self.store.put_trajectory(traj)
        return IngestResponse(id=traj.id, revision=revision)

    def extract(self, trajectory_id: str, mode: ExtractMode = ExtractMode.BOTH) -> ExtractionSummary:
        """Run the extraction pipeline for a stored trajectory and store its tips."""
        traj = self.store.get_trajectory(trajectory_id)
        ir = extract_intelligence(traj, self.gateway)
        task_tips: list[Tip] = []
        sub_tips: list[Tip] = []
        attributions = []
        subtasks = []
        if mode in (ExtractMode.TASK, ExtractMode.BOTH):
            attributions = attribute_decisions(ir, traj, self.gateway)
            task_tips = generate_task_tips(ir, attributions, traj, self.gateway, clock=self.clock)
        if mode in (ExtractMode.SUBTASK, ExtractMode.BOTH):
            subtasks = segment_subtasks(traj, self.gateway)
            sub_tips = generate_subtask_tips(traj, subtasks, self.gateway, ir.outcome, clock=self.clock)
        tips = task_tips + sub_tips
        revision = self.store.put_tips(tips) if tips else self.store.revision
        return ExtractionSummary(
            trajectory_id=traj.id,
            mode=mode,
            outcome=ir.outcome,
            attributions=len(attributions),
            subtasks=len(subtasks),
            task_tip_ids=[t.id for t in task_tips],
            subtask_tip_ids=[t.id for t in sub_tips],
            tip_count=len(tips),
            revision=revision,
        )

    # -- curation ---------------------------------------------------------------------------

    def consolidate(self, threshold: float | None = None) -> ConsolidationReport:
        if not self._consolidating.acquire(blocking=False):
            raise errors.Busy("a consolidation is already running")
        try:
            return run_consolidation(
                self.store,
                self.gateway,
                self.threshold if threshold is None else threshold,
                cluster_task_tips=self.cluster_task_tips,
            )
        finally:
            self._consolidating.release()

    # -- reads ------------------------------------------------------------------------------

    def retrieve(self, request: RetrieveRequest) -> RetrieveResponse:
        cfg = RetrievalConfig(
            strategy=request.strategy,
            tau=request.tau,
            k=request.k,
            llm_tau_floor=self.llm_tau_floor,
            **({"granularities": frozenset(request.granularities)} if request.granularities else {}),
        )
        result = retrieve(self.store.snapshot(), request.task_description, cfg, self.gateway)
        return RetrieveResponse(**dict(result), rendered=render_guidelines(result))

    def tips(
        self,
        *,
        category: TipCategory | None = None,
        priority: Priority | None = None,
        application_context: str | None = None,
        task_category: str | None = None,
        granularity: Granularity | None = None,
        generic_only: bool = False,
    ) -> TipList:
        flt = MetadataFilter(
            category=category,
            priority=priority,
            application_context=application_context,
            task_category=task_category,
            granularity=granularity,
            generic_only=generic_only,
        )
        state = self.store.snapshot()
        tips = [t for t, _ in state.query(flt)]
        return TipList(revision=state.revision, count=len(tips), tips=tips)

    def tip(self, tip_id: str) -> Tip:
        return self.store.get_tip(tip_id)

    def stats(self) -> StatsResponse:
        return StatsResponse(**self.store.snapshot().stats())

    def export_jsonl(self) -> Iterator[str]:
        """One JSON line per trajectory, tip and cluster, in id order."""
        state = self.store.snapshot()
        for kind, items in (("trajectory", state.trajectories), ("tip", state.tips), ("cluster", state.clusters)):
            for key in sorted(items):
                record = {"kind": kind, "data": items[key].model_dump(mode="json")}
                yield json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
