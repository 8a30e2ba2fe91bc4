"""Decision attribution: find outcome indicators and trace them to causes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from tmem.extraction.intelligence import enrich, recovery_pairs
from tmem.extraction.signals import detect_loops, step_has_error, step_view
from tmem.gateway import Gateway, Role
from tmem.models import (
    AttributionKind,
    CausalNode,
    DecisionAttribution,
    IntermediateRepresentation,
    OutcomeKind,
    PatternKind,
    Trajectory,
)


@dataclass(frozen=True)
class OutcomeIndicator:
    kind: AttributionKind
    step_index: int
    description: str

    @property
    def key(self) -> str:
        return f"{self.kind.value}@{self.step_index}"


def detect_indicators(ir: IntermediateRepresentation, traj: Trajectory) -> list[OutcomeIndicator]:
    """Scan the representation for failure, recovery, inefficiency and success indicators."""
    last = len(traj.steps) - 1
    occurrences = list(ir.patterns)
    found: list[OutcomeIndicator] = []

    if ir.outcome.kind is OutcomeKind.FAILURE:
        report = traj.evaluation_report
        error_steps = [s.index for s in traj.steps if step_has_error(s)] + [
            o.step_index for o in occurrences if o.pattern.kind is PatternKind.ERROR_RECOGNITION
        ]
        where = max(error_steps) if error_steps else last
        failed = report.failed_indicators if report is not None else []
        if failed:
            found += [
                OutcomeIndicator(AttributionKind.FAILURE, where, f"evaluation '{i.name}' failed: {i.message}".rstrip(": "))
                for i in failed
            ]
        else:
            found.append(OutcomeIndicator(AttributionKind.FAILURE, where, f"task not completed: {ir.outcome.rationale}"))

    for err, fix in recovery_pairs(occurrences):
        found.append(
            OutcomeIndicator(AttributionKind.RECOVERY, fix, f"error recognized at step {err}, corrected at step {fix}")
        )

    loops = detect_loops(traj)
    for run in loops:
        arg = f" varying '{run.varying}'" if run.varying else ""
        found.append(
            OutcomeIndicator(
                AttributionKind.INEFFICIENCY,
                run.start,
                f"{run.name} called {run.end - run.start + 1} times in a row{arg} (steps {run.start}-{run.end})",
            )
        )
    if ir.outcome.kind is OutcomeKind.INEFFICIENT_SUCCESS and not loops:
        aware = [o.step_index for o in occurrences if o.pattern.kind is PatternKind.EFFICIENCY_AWARENESS]
        found.append(
            OutcomeIndicator(AttributionKind.INEFFICIENCY, aware[0] if aware else last, "completed with avoidable operations")
        )

    if ir.outcome.kind is OutcomeKind.CLEAN_SUCCESS:
        found.append(OutcomeIndicator(AttributionKind.SUCCESS_PATTERN, last, "task completed cleanly"))
    elif ir.outcome.kind is OutcomeKind.RECOVERY_SUCCESS and not any(
        i.kind is AttributionKind.RECOVERY for i in found
    ):
        found.append(OutcomeIndicator(AttributionKind.RECOVERY, last, "completed after recovering from an error"))

    # one attribution per indicator; identical keys would yield identical prompts
    unique: dict[str, OutcomeIndicator] = {}
    for ind in found:
        unique.setdefault(f"{ind.key}:{ind.description}", ind)
    return list(unique.values())


def _node(data: dict[str, Any]) -> CausalNode:
    return CausalNode(step_index=data["step_index"], description=data.get("description", ""))


def attribute_decisions(ir: IntermediateRepresentation, traj: Trajectory, gateway: Gateway) -> list[DecisionAttribution]:
    """One causal analysis (an ``attribution_analyst`` call) per detected indicator."""
    if ir.trajectory_id != traj.id:
        raise ValueError(f"representation {ir.trajectory_id} does not belong to trajectory {traj.id}")
    enriched = enrich(traj, ir)
    steps = [step_view(s) for s in enriched.steps]
    n = len(traj.steps)
    out = []
    for ind in detect_indicators(ir, traj):

        def check(payload: dict[str, Any], kind: AttributionKind = ind.kind) -> None:
            nodes = [payload["immediate_cause"], payload["root_cause"], *payload.get("contributing_factors", [])]
            if payload.get("proximate_cause"):
                nodes.append(payload["proximate_cause"])
            bad = [nd["step_index"] for nd in nodes if nd["step_index"] >= n]
            if bad:
                raise ValueError(f"causal nodes refer to missing steps {bad}; valid range is 0..{n - 1}")
            actionable = [s for s in payload["improvement_steps"] if s.strip()]
            if kind in (AttributionKind.FAILURE, AttributionKind.INEFFICIENCY) and not actionable:
                raise ValueError("improvement_steps must contain at least one actionable instruction")

        payload = gateway.ask(
            Role.ATTRIBUTION_ANALYST,
            {
                "trajectory_id": traj.id,
                "indicator_key": ind.key,
                "task_description": traj.task_description,
                "outcome_kind": ind.kind.value,
                "indicator": ind.description,
                "indicator_step": ind.step_index,
                "steps": steps,
            },
            check,
        )
        immediate, root = _node(payload["immediate_cause"]), _node(payload["root_cause"])
        proximate = _node(payload["proximate_cause"]) if payload.get("proximate_cause") else None
        if immediate.step_index == root.step_index or (
            proximate is not None and proximate.step_index == root.step_index
        ):
            proximate = None
        out.append(
            DecisionAttribution(
                outcome_kind=ind.kind,
                indicator=ind.description,
                immediate_cause=immediate,
                proximate_cause=proximate,
                root_cause=root,
                contributing_factors=tuple(_node(c) for c in payload.get("contributing_factors", [])),
                improvement_steps=tuple(s.strip() for s in payload["improvement_steps"] if s.strip()),
                prerequisite_critical=bool(payload.get("prerequisite_critical", False)),
            )
        )
    return out
