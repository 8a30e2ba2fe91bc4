"""Subtask-level extraction: segment a trajectory, then tip each subtask."""

from __future__ import annotations

import logging
import re
from collections.abc import Sequence

from tmem.extraction.signals import step_view
from tmem.extraction.tips import build_tip
from tmem.gateway import Gateway, Role
from tmem.models import (
    Clock,
    Granularity,
    OutcomeClassification,
    OutcomeKind,
    Priority,
    Subtask,
    Tip,
    TipCategory,
    Trajectory,
    make_id,
    utc_now,
)

log = logging.getLogger(__name__)

MAX_TIPS_PER_SUBTASK = 4
EMAIL = re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+")


def clip_ranges(ranges: Sequence[tuple[int, int]], step_count: int) -> tuple[list[tuple[int, tuple[int, int]]], list[str]]:
    """Make ranges ordered and disjoint inside ``[0, step_count)``.

    Ranges are sorted by (start, end); each start is pushed past the furthest
    end seen so far, and ranges left empty are dropped. Returns
    ``(original_position, clipped_range)`` pairs plus warnings. The union of
    the input ranges (inside the trajectory) is preserved.
    """
    warnings: list[str] = []
    order = sorted(range(len(ranges)), key=lambda i: (ranges[i][0], ranges[i][1], i))
    last = step_count - 1
    kept: list[tuple[int, tuple[int, int]]] = []
    frontier = -1
    for i in order:
        start, end = ranges[i]
        if end > last:
            warnings.append(f"subtask {i}: end {end} clipped to {last}")
            end = last
        if start <= frontier:
            warnings.append(f"subtask {i}: start {start} overlaps previous subtask, moved to {frontier + 1}")
            start = frontier + 1
        if start > end:
            warnings.append(f"subtask {i}: empty after clipping, dropped")
            continue
        kept.append((i, (start, end)))
        frontier = end
    return kept, warnings


def segment_subtasks(traj: Trajectory, gateway: Gateway) -> list[Subtask]:
    n = len(traj.steps)
    payload = gateway.ask(
        Role.SEGMENTER,
        {
            "trajectory_id": traj.id,
            "task_description": traj.task_description,
            "step_count": n,
            "steps": [step_view(s, thoughts=False) for s in traj.steps],
        },
    )
    raw = payload["subtasks"]
    if not raw:
        log.warning("trajectory %s: segmenter returned no subtasks, using one spanning all steps", traj.id)
        return [
            Subtask(
                description=traj.task_description,
                generalized=False,
                apps=frozenset(traj.app_hints or ()),
                step_range=(0, n - 1),
                purpose=traj.task_description,
                flagged=True,
            )
        ]

    kept, warnings = clip_ranges([(s["start"], max(s["start"], s["end"])) for s in raw], n)
    for w in warnings:
        log.warning("trajectory %s: %s", traj.id, w)
    out = []
    for i, (start, end) in kept:
        item = raw[i]
        description = item["description"].strip()
        out.append(
            Subtask(
                description=description,
                generalized=not EMAIL.search(description),
                apps=frozenset(a.strip().lower() for a in item.get("apps", []) if a.strip()),
                step_range=(start, end),
                purpose=(item.get("purpose") or "").strip(),
                flagged=bool(warnings),
            )
        )
    return out


def subtask_tip_priority(category: TipCategory, outcome: OutcomeKind | None) -> Priority:
    if category is TipCategory.RECOVERY:
        return Priority.CRITICAL if outcome is OutcomeKind.FAILURE else Priority.HIGH
    return Priority.MEDIUM


def generate_subtask_tips(
    traj: Trajectory,
    subtasks: Sequence[Subtask],
    gateway: Gateway,
    outcome: OutcomeClassification | None = None,
    clock: Clock = utc_now,
) -> list[Tip]:
    """Ask for 2-4 tips per subtask; fewer are accepted, extras are dropped."""
    now = clock()
    kind = outcome.kind if outcome is not None else None
    tips: list[Tip] = []
    for s_idx, sub in enumerate(subtasks):
        start, end = sub.step_range
        payload = gateway.ask(
            Role.SUBTASK_TIPPER,
            {
                "trajectory_id": traj.id,
                "subtask_index": s_idx,
                "description": sub.description,
                "purpose": sub.purpose,
                "apps": sorted(sub.apps),
                "outcome_kind": kind.value if kind else "unknown",
                "steps": [step_view(s, thoughts=False) for s in traj.steps[start : end + 1]],
            },
        )
        bodies = payload["tips"]
        if len(bodies) > MAX_TIPS_PER_SUBTASK:
            log.warning(
                "trajectory %s subtask %d: %d tips returned, keeping %d",
                traj.id, s_idx, len(bodies), MAX_TIPS_PER_SUBTASK,
            )
            bodies = bodies[:MAX_TIPS_PER_SUBTASK]
        context = next(iter(sub.apps)) if len(sub.apps) == 1 else None
        for t_idx, body in enumerate(bodies):
            if EMAIL.search(body["content"]):
                log.warning("trajectory %s subtask %d: tip %d mentions an email address", traj.id, s_idx, t_idx)
            category = TipCategory(body.get("category") or TipCategory.STRATEGY.value)
            tips.append(
                build_tip(
                    gateway,
                    tip_id=make_id("tip", traj.id, "subtask", str(s_idx), str(t_idx)),
                    body=body,
                    category=category,
                    priority=subtask_tip_priority(category, kind),
                    granularity=Granularity.SUBTASK,
                    index_description=sub.description,
                    subtask_description=sub.description,
                    source_ids=[traj.id],
                    source_outcome=kind.value if kind else "unknown",
                    created_at=now,
                    application_context=context,
                )
            )
    return tips
