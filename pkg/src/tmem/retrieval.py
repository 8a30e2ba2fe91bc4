"""Runtime tip selection and rendering of the guidelines prompt section."""

from __future__ import annotations

import logging
from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from tmem import errors
from tmem.gateway import Gateway, Role
from tmem.models import Granularity, Tip, TipCategory
from tmem.store import MemoryStore, MetadataFilter, StoreState

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.6
DEFAULT_K = 5
FALLBACK = "cosine_fallback"


class Strategy(str, Enum):
    COSINE = "cosine"
    LLM_GUIDED = "llm_guided"


class RetrievalConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    strategy: Strategy = Strategy.COSINE
    tau: float = Field(DEFAULT_TAU, gt=0.0, le=1.0)
    k: int = Field(DEFAULT_K, ge=1)
    granularities: frozenset[Granularity] = frozenset(Granularity)
    # whether llm_guided selection also drops candidates below tau
    llm_tau_floor: bool = True

    @field_validator("granularities")
    @classmethod
    def _non_empty(cls, v: frozenset[Granularity]) -> frozenset[Granularity]:
        if not v:
            raise ValueError("at least one granularity is required")
        return v

    def tip_filter(self) -> MetadataFilter:
        if len(self.granularities) == 1:
            return MetadataFilter(granularity=next(iter(self.granularities)))
        return MetadataFilter()


class RetrievedTip(BaseModel):
    tip: Tip
    score: float
    matched_description: str


class Selection(BaseModel):
    application_context: Optional[str] = None
    task_category: Optional[str] = None
    preferred_categories: list[TipCategory] = Field(default_factory=list)


class RetrievalResult(BaseModel):
    tips: list[RetrievedTip]
    strategy_used: str
    query_text: str
    selection: Optional[Selection] = None
    warnings: list[str] = Field(default_factory=list)


def _snapshot(store: MemoryStore | StoreState) -> StoreState:
    return store.snapshot() if isinstance(store, MemoryStore) else store


def _query_embedding(task_description: str, gateway: Gateway):
    if not task_description or not task_description.strip():
        raise errors.EmptyQuery("task description is empty")
    return gateway.embed(task_description)


def retrieve_cosine(
    store: MemoryStore | StoreState,
    task_description: str,
    cfg: RetrievalConfig,
    gateway: Gateway,
) -> RetrievalResult:
    """Tips whose index description scores at least tau, best k first."""
    state = _snapshot(store)
    q = _query_embedding(task_description, gateway)
    hits = state.query(cfg.tip_filter(), q, against="index", floor=cfg.tau)[: cfg.k]
    return RetrievalResult(
        tips=[RetrievedTip(tip=t, score=s, matched_description=t.index_description) for t, s in hits],
        strategy_used=Strategy.COSINE.value,
        query_text=task_description,
    )


def known_contexts(state: StoreState) -> tuple[list[str], list[str]]:
    apps = {t.application_context for t in state.tips.values() if t.application_context}
    for traj in state.trajectories.values():
        apps.update(traj.app_hints or ())
    categories = {t.task_category for t in state.tips.values() if t.task_category}
    return sorted(apps), sorted(categories)


def _clean(value: Optional[str]) -> Optional[str]:
    return value.strip().lower() if value and value.strip() else None


def retrieve_llm_guided(
    store: MemoryStore | StoreState,
    task_description: str,
    cfg: RetrievalConfig,
    gateway: Gateway,
) -> RetrievalResult:
    """Let the selector pick context filters and a category order.

    Candidates are filtered on application context and task category (a null
    tip value always matches), then ordered by preferred-category rank, score
    and id. A gateway failure falls back to :func:`retrieve_cosine`.
    """
    state = _snapshot(store)
    q = _query_embedding(task_description, gateway)
    apps, categories = known_contexts(state)
    try:
        payload = gateway.ask(
            Role.RETRIEVAL_SELECTOR,
            {"task_description": task_description, "known_apps": apps, "known_task_categories": categories},
        )
    except errors.GatewayError as exc:
        log.warning("retrieval selector unavailable, falling back to cosine: %s", exc)
        result = retrieve_cosine(state, task_description, cfg, gateway)
        return result.model_copy(
            update={"strategy_used": FALLBACK, "warnings": [f"llm_guided selection failed: {exc}"]}
        )

    selection = Selection(
        application_context=_clean(payload.get("application_context")),
        task_category=_clean(payload.get("task_category")),
        preferred_categories=[TipCategory(c) for c in payload["preferred_categories"]],
    )
    flt = cfg.tip_filter().model_copy(
        update={"application_context": selection.application_context, "task_category": selection.task_category}
    )
    floor = cfg.tau if cfg.llm_tau_floor else None
    hits = state.query(flt, q, against="index", floor=floor)
    rank = {c: i for i, c in enumerate(selection.preferred_categories)}
    hits.sort(key=lambda h: (rank.get(h[0].category, len(rank)), -h[1], h[0].id))
    return RetrievalResult(
        tips=[RetrievedTip(tip=t, score=s, matched_description=t.index_description) for t, s in hits[: cfg.k]],
        strategy_used=Strategy.LLM_GUIDED.value,
        query_text=task_description,
        selection=selection,
    )


def retrieve(
    store: MemoryStore | StoreState,
    task_description: str,
    cfg: RetrievalConfig,
    gateway: Gateway,
) -> RetrievalResult:
    if cfg.strategy is Strategy.LLM_GUIDED:
        return retrieve_llm_guided(store, task_description, cfg, gateway)
    return retrieve_cosine(store, task_description, cfg, gateway)


def render_tip(tip: Tip) -> str:
    lines = [
        f"[PRIORITY: {tip.priority.value.upper()}] {tip.category.value.capitalize()} Tip:",
        tip.content,
        "",
        f"Apply when: {tip.trigger}".rstrip(),
    ]
    if tip.steps:
        lines.append("Steps:")
        lines.extend(f"{n}. {step}" for n, step in enumerate(tip.steps, 1))
    if tip.negative_example:
        lines.append(f"Avoid: {tip.negative_example}")
    return "\n".join(lines)


def render_guidelines(result: RetrievalResult) -> str:
    """Guidelines section text; blocks in result order, empty for no tips."""
    if not result.tips:
        return ""
    return "\n\n".join(render_tip(r.tip) for r in result.tips) + "\n"
