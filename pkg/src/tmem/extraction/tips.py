"""Task-level tip generation."""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from typing import Any

from tmem.gateway import Gateway, Role
from tmem.models import (
    CATEGORY_FOR_ATTRIBUTION,
    AttributionKind,
    Clock,
    DecisionAttribution,
    Granularity,
    IntermediateRepresentation,
    Priority,
    Tip,
    TipCategory,
    Trajectory,
    make_id,
    utc_now,
)

CATEGORY_GUIDANCE = {
    TipCategory.STRATEGY: "an effective pattern from a clean execution that should be repeated",
    TipCategory.RECOVERY: "how to recognize this failure and the steps that correct it",
    TipCategory.OPTIMIZATION: "the more efficient alternative to what the agent did",
}


def task_tip_priority(attribution: DecisionAttribution) -> Priority:
    """Severity rule: blocking failures are critical, recovered ones high."""
    kind = attribution.outcome_kind
    if kind is AttributionKind.FAILURE:
        return Priority.CRITICAL
    if kind is AttributionKind.RECOVERY:
        return Priority.HIGH
    if kind is AttributionKind.SUCCESS_PATTERN and attribution.prerequisite_critical:
        return Priority.HIGH
    return Priority.MEDIUM


def _clean_context(value: Any) -> str | None:
    if not isinstance(value, str) or not value.strip():
        return None
    return value.strip().lower()


def build_tip(
    gateway: Gateway,
    *,
    tip_id: str,
    body: Mapping[str, Any],
    category: TipCategory,
    priority: Priority,
    granularity: Granularity,
    index_description: str,
    source_ids: Sequence[str],
    source_outcome: str,
    created_at: Any,
    application_context: str | None = None,
    task_category: str | None = None,
    subtask_description: str | None = None,
    generalized_description: str | None = None,
) -> Tip:
    content = body["content"].strip()
    purpose = (body.get("purpose") or "").strip()
    return Tip(
        id=tip_id,
        category=category,
        content=content,
        purpose=purpose,
        steps=tuple(s.strip() for s in body.get("steps") or () if s.strip()),
        trigger=(body.get("trigger") or "").strip(),
        negative_example=(body.get("negative_example") or "").strip() or None,
        application_context=application_context,
        task_category=task_category,
        priority=priority,
        granularity=granularity,
        subtask_description=subtask_description,
        generalized_description=generalized_description,
        index_description=index_description,
        source_trajectory_ids=tuple(sorted(source_ids)),
        source_outcome=source_outcome,
        embedding=gateway.embed(f"{content}\n{purpose}" if purpose else content),
        index_embedding=gateway.embed(index_description),
        created_at=created_at,
    )


def generate_task_tips(
    ir: IntermediateRepresentation,
    attributions: Sequence[DecisionAttribution],
    traj: Trajectory,
    gateway: Gateway,
    clock: Clock = utc_now,
) -> list[Tip]:
    """Turn each attribution into task-level tips (plus generic variants)."""
    now = clock()
    apps = sorted(traj.app_hints or ())
    tips: list[Tip] = []
    for a_idx, attribution in enumerate(attributions):
        category = CATEGORY_FOR_ATTRIBUTION[attribution.outcome_kind]
        priority = task_tip_priority(attribution)
        payload = gateway.ask(
            Role.TIP_GENERATOR,
            {
                "trajectory_id": traj.id,
                "attribution_index": a_idx,
                "indicator": attribution.indicator,
                "category": category.value,
                "category_guidance": CATEGORY_GUIDANCE[category],
                "task_description": traj.task_description,
                "apps": apps,
                "outcome_kind": ir.outcome.kind.value,
                "attribution": attribution.model_dump(mode="json"),
            },
        )
        for t_idx, body in enumerate(payload["tips"]):
            common = dict(
                category=category,
                priority=priority,
                granularity=Granularity.TASK,
                index_description=traj.task_description,
                source_ids=[traj.id],
                source_outcome=ir.outcome.kind.value,
                created_at=now,
            )
            tips.append(
                build_tip(
                    gateway,
                    tip_id=make_id("tip", traj.id, "task", str(a_idx), str(t_idx)),
                    body=body,
                    application_context=_clean_context(body.get("application_context")),
                    task_category=_clean_context(body.get("task_category")),
                    **common,
                )
            )
            if body.get("generic"):
                tips.append(
                    build_tip(
                        gateway,
                        tip_id=make_id("tip", traj.id, "task", str(a_idx), str(t_idx), "generic"),
                        body=body["generic"],
                        **common,
                    )
                )
    return tips
