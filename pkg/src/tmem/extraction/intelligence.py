"""Trajectory intelligence: thoughts, cognitive patterns, outcome classification."""

from __future__ import annotations

import logging
from typing import Any

from tmem.extraction.signals import (
    LoopRun,
    detect_loops,
    has_completion_signal,
    split_segments,
    step_has_error,
    step_view,
)
from tmem.gateway import Gateway, Role
from tmem.models import (
    CausalNode,
    CognitivePattern,
    IndicatorDiagnosis,
    IntermediateRepresentation,
    OutcomeClassification,
    OutcomeKind,
    OutcomeSource,
    PatternKind,
    PatternOccurrence,
    SuccessAnalysis,
    Thought,
    ThoughtCategory,
    Trajectory,
)

log = logging.getLogger(__name__)

NO_COMPLETION = "no completion signal"


def categorize_thoughts(traj: Trajectory, gateway: Gateway) -> dict[int, tuple[Thought, ...]]:
    """One batched categorizer call per step that has reasoning segments."""
    out: dict[int, tuple[Thought, ...]] = {}
    for step in traj.steps:
        segments = split_segments(step.response)
        if not segments:
            out[step.index] = ()
            continue

        def check(payload: dict[str, Any], n: int = len(segments)) -> None:
            seen = sorted(t["index"] for t in payload["thoughts"])
            if seen != list(range(n)):
                raise ValueError(f"expected one category for each segment 0..{n - 1}, got {seen}")

        payload = gateway.ask(
            Role.THOUGHT_CATEGORIZER,
            {
                "trajectory_id": traj.id,
                "step_index": step.index,
                "task_description": traj.task_description,
                "segments": [{"index": i, "text": s} for i, s in enumerate(segments)],
            },
            check,
        )
        by_index = {t["index"]: ThoughtCategory(t["category"]) for t in payload["thoughts"]}
        out[step.index] = tuple(Thought(text=s, category=by_index[i]) for i, s in enumerate(segments))
    return out


def detect_patterns(
    traj: Trajectory, thoughts: dict[int, tuple[Thought, ...]], gateway: Gateway
) -> list[PatternOccurrence]:
    steps = [
        {**step_view(step, thoughts=False), "thoughts": [
            {"text": t.text, "category": t.category.value} for t in thoughts.get(step.index, ())
        ]}
        for step in traj.steps
    ]

    def check(payload: dict[str, Any]) -> None:
        for p in payload["patterns"]:
            idx = p["step_index"]
            if idx >= len(traj.steps):
                raise ValueError(f"pattern refers to missing step {idx}")
            if p["evidence"] not in traj.steps[idx].response:
                raise ValueError(f"evidence {p['evidence']!r} is not a substring of step {idx}'s response")

    payload = gateway.ask(
        Role.PATTERN_DETECTOR,
        {"trajectory_id": traj.id, "task_description": traj.task_description, "steps": steps},
        check,
    )
    found = [
        PatternOccurrence(
            step_index=p["step_index"],
            pattern=CognitivePattern(kind=p["kind"], confidence=p["confidence"], evidence=p["evidence"]),
        )
        for p in payload["patterns"]
    ]
    # stable step order so "followed by" rules read naturally
    return sorted(found, key=lambda o: o.step_index)


def _attach(thoughts: tuple[Thought, ...], occurrences: list[PatternOccurrence]) -> tuple[Thought, ...]:
    out = []
    for thought in thoughts:
        attached = tuple(
            o.pattern
            for o in occurrences
            if o.pattern.evidence in thought.text or thought.text in o.pattern.evidence
        )
        out.append(thought.model_copy(update={"patterns": attached}) if attached else thought)
    return tuple(out)


def _steps_with(occurrences: list[PatternOccurrence], kind: PatternKind) -> list[int]:
    return [o.step_index for o in occurrences if o.pattern.kind is kind]


def recovery_pairs(occurrences: list[PatternOccurrence]) -> list[tuple[int, int]]:
    """(error_recognition step, first self_correction step at or after it)."""
    corrections = _steps_with(occurrences, PatternKind.SELF_CORRECTION)
    pairs: list[tuple[int, int]] = []
    used: set[int] = set()
    for err in _steps_with(occurrences, PatternKind.ERROR_RECOGNITION):
        fix = next((c for c in corrections if c >= err), None)
        if fix is not None and fix not in used:
            used.add(fix)
            pairs.append((err, fix))
    return pairs


def preliminary_outcome(
    traj: Trajectory, occurrences: list[PatternOccurrence], loops: list[LoopRun]
) -> OutcomeClassification:
    """Ordered rule over detected signals; ground truth decides pass/fail when present."""
    report = traj.evaluation_report
    source = OutcomeSource.GROUND_TRUTH if report is not None else OutcomeSource.INFERRED
    recovered = bool(recovery_pairs(occurrences))
    inefficient = bool(loops) or bool(_steps_with(occurrences, PatternKind.EFFICIENCY_AWARENESS))
    errors_seen = bool(_steps_with(occurrences, PatternKind.ERROR_RECOGNITION)) or any(
        step_has_error(s) for s in traj.steps
    )

    if report is not None:
        if not report.passed:
            failed = ", ".join(i.name for i in report.failed_indicators) or "evaluation failed"
            return OutcomeClassification(kind=OutcomeKind.FAILURE, source=source, rationale=f"failed: {failed}")
        if recovered:
            return OutcomeClassification(
                kind=OutcomeKind.RECOVERY_SUCCESS, source=source,
                rationale="passed after recognizing and correcting an error",
            )
        if inefficient:
            return OutcomeClassification(
                kind=OutcomeKind.INEFFICIENT_SUCCESS, source=source,
                rationale="passed with repeated or avoidable operations",
            )
        return OutcomeClassification(kind=OutcomeKind.CLEAN_SUCCESS, source=source, rationale="passed cleanly")

    completed = has_completion_signal(traj)
    if recovered and completed:
        last_fix = recovery_pairs(occurrences)[-1][1]
        return OutcomeClassification(
            kind=OutcomeKind.RECOVERY_SUCCESS, source=source,
            rationale=f"error recognized and self-corrected by step {last_fix}, then completed",
        )
    if inefficient and completed:
        return OutcomeClassification(
            kind=OutcomeKind.INEFFICIENT_SUCCESS, source=source,
            rationale="completed with repeated or avoidable operations",
        )
    if completed and not errors_seen:
        return OutcomeClassification(kind=OutcomeKind.CLEAN_SUCCESS, source=source, rationale="completed without errors")
    if not completed and not errors_seen:
        return OutcomeClassification(
            kind=OutcomeKind.FAILURE, source=source, rationale=NO_COMPLETION, low_confidence=True
        )
    return OutcomeClassification(kind=OutcomeKind.FAILURE, source=source, rationale="errors without recovery or completion")


def interpret_outcome(
    traj: Trajectory,
    occurrences: list[PatternOccurrence],
    preliminary: OutcomeClassification,
    gateway: Gateway,
) -> tuple[OutcomeClassification, tuple[IndicatorDiagnosis, ...] | None]:
    report = traj.evaluation_report

    def check(payload: dict[str, Any]) -> None:
        kind = payload.get("kind")
        if report is not None and kind is not None and (kind == "failure") == report.passed:
            raise ValueError(f"kind {kind!r} contradicts the ground-truth result passed={report.passed}")
        if report is not None:
            names = {i.name for i in report.indicators}
            for d in payload.get("diagnoses", []):
                if d["indicator"] not in names:
                    raise ValueError(f"unknown indicator {d['indicator']!r}")

    payload = gateway.ask(
        Role.OUTCOME_INTERPRETER,
        {
            "trajectory_id": traj.id,
            "task_description": traj.task_description,
            "evaluation_report": report.model_dump(mode="json") if report is not None else None,
            "preliminary_kind": preliminary.kind.value,
            "preliminary_rationale": preliminary.rationale,
            "patterns": [o.model_dump(mode="json") for o in occurrences],
            "final_response": traj.steps[-1].response,
        },
        check,
    )
    outcome = preliminary
    if payload.get("kind") is not None and payload["kind"] != preliminary.kind.value:
        outcome = OutcomeClassification(
            kind=OutcomeKind(payload["kind"]),
            source=preliminary.source,
            rationale=payload.get("rationale") or preliminary.rationale,
        )

    diagnoses = None
    if report is not None:
        given = {d["indicator"]: d["diagnosis"] for d in payload.get("diagnoses", [])}
        diagnoses = tuple(
            IndicatorDiagnosis(indicator=i.name, diagnosis=given.get(i.name) or i.message or ("passed" if i.passed else "failed"))
            for i in report.indicators
        )
    return outcome, diagnoses


def _success_analysis(
    outcome: OutcomeKind, occurrences: list[PatternOccurrence], loops: list[LoopRun], last_step: int
) -> SuccessAnalysis | None:
    def node(step: int, text: str) -> CausalNode:
        return CausalNode(step_index=step, description=text)

    if outcome is OutcomeKind.FAILURE:
        return None
    if outcome is OutcomeKind.RECOVERY_SUCCESS:
        evidence = []
        for err, fix in recovery_pairs(occurrences):
            evidence += [node(err, "error recognized"), node(fix, "self-correction")]
        return SuccessAnalysis(kind="recovery", evidence=tuple(evidence))
    if outcome is OutcomeKind.INEFFICIENT_SUCCESS:
        evidence = [node(r.start, f"{r.name} called {r.end - r.start + 1} times in a row (steps {r.start}-{r.end})") for r in loops]
        evidence += [node(s, "efficiency consideration") for s in _steps_with(occurrences, PatternKind.EFFICIENCY_AWARENESS)]
        return SuccessAnalysis(kind="inefficient", evidence=tuple(evidence))
    evidence = [
        node(o.step_index, f"{o.pattern.kind.value}: {o.pattern.evidence}")
        for o in occurrences
        if o.pattern.kind in (PatternKind.VALIDATION, PatternKind.API_DISCOVERY)
    ] or [node(last_step, "completed without errors")]
    return SuccessAnalysis(kind="clean", evidence=tuple(evidence))


def extract_intelligence(traj: Trajectory, gateway: Gateway) -> IntermediateRepresentation:
    """Enrich a validated trajectory into an intermediate representation."""
    thoughts = categorize_thoughts(traj, gateway)
    occurrences = detect_patterns(traj, thoughts, gateway)
    loops = detect_loops(traj)
    preliminary = preliminary_outcome(traj, occurrences, loops)
    outcome, diagnoses = interpret_outcome(traj, occurrences, preliminary, gateway)

    warnings = []
    if outcome.low_confidence:
        warnings.append(f"outcome classified with low confidence: {outcome.rationale}")
        log.warning("trajectory %s: %s", traj.id, warnings[-1])

    return IntermediateRepresentation(
        trajectory_id=traj.id,
        thoughts_by_step={i: _attach(ts, [o for o in occurrences if o.step_index == i]) for i, ts in thoughts.items()},
        patterns=tuple(occurrences),
        outcome=outcome,
        success_analysis=_success_analysis(outcome.kind, occurrences, loops, len(traj.steps) - 1),
        evaluation_intelligence=diagnoses,
        task_intent=traj.task_description,
        step_count=len(traj.steps),
        warnings=tuple(warnings),
    )


def enrich(traj: Trajectory, ir: IntermediateRepresentation) -> Trajectory:
    """Copy of ``traj`` with each step's thoughts filled in from ``ir``."""
    steps = tuple(
        s.model_copy(update={"thoughts": ir.thoughts_by_step.get(s.index, ())}) for s in traj.steps
    )
    return traj.model_copy(update={"steps": steps})
