"""Deterministic trajectory signals: thought segments, loops, errors, completion."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any

from tmem.models import Step, Trajectory

# Section markers a ReAct-style response may carry. Sections introduced by the
# non-thought labels are not reasoning and are skipped.
_MARKER = re.compile(
    r"(?im)^[ \t]*(thought|plan|reflection|analysis|validation|reasoning|"
    r"action input|action|observation|code|final answer)[ \t]*:"
)
_NON_THOUGHT = {"action", "action input", "observation", "code"}
_FENCE = re.compile(r"```.*?(?:```|\Z)", re.S)
_SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+|\n+")
_HAS_WORD = re.compile(r"\w")

_ERROR_TEXT = re.compile(
    r"\b(error|exception|traceback|failed|failure|denied|invalid|unauthori[sz]ed|"
    r"not found|bad request|forbidden)\b|\b(?:http|status(?: code)?)\s*:?\s*[45]\d\d\b",
    re.I,
)
_COMPLETION_ACTION = re.compile(r"complete|finish|submit|done", re.I)
_COMPLETION_TEXT = re.compile(
    r"\b(task (is|has been) (now )?(complete|completed|done|finished)|"
    r"(completed|finished) the task|marking the task as (complete|done)|"
    r"task complete)\b",
    re.I,
)

LOOP_MIN_LENGTH = 3


def split_segments(response: str) -> list[str]:
    """Split a response into verbatim reasoning segments.

    Explicit markers ("Thought:", "Plan:", ...) open sections; action, code and
    observation sections and fenced code blocks are dropped; the rest is cut at
    sentence punctuation and line breaks.
    """
    masked = _FENCE.sub(lambda m: "\n" * len(m.group(0)), response)
    regions: list[tuple[int, int]] = []
    start, keep = 0, True
    for m in _MARKER.finditer(masked):
        if keep:
            regions.append((start, m.start()))
        keep = m.group(1).lower() not in _NON_THOUGHT
        start = m.end()
    if keep:
        regions.append((start, len(masked)))

    segments: list[str] = []
    for lo, hi in regions:
        cursor = lo
        for piece in _SENTENCE_BREAK.split(masked[lo:hi]):
            text = piece.strip()
            if not text:
                continue
            at = masked.index(text, cursor)
            cursor = at + len(text)
            original = response[at:cursor]
            if _HAS_WORD.search(original) and original.strip():
                segments.append(original)
    return segments


@dataclass(frozen=True)
class LoopRun:
    """Consecutive calls to one operation where a single argument varies."""

    name: str
    start: int
    end: int
    varying: str | None

    @property
    def steps(self) -> list[int]:
        return list(range(self.start, self.end + 1))


def _varying_keys(args: list[dict[str, Any]]) -> set[str]:
    first = args[0]
    return {k for k in first if any(a.get(k) != first[k] for a in args[1:])}


def detect_loops(traj: Trajectory, min_length: int = LOOP_MIN_LENGTH) -> list[LoopRun]:
    """Runs of >= ``min_length`` consecutive actions with the same signature.

    Within a run at most one argument may take different values; steps
    without an action break a run.
    """
    runs: list[LoopRun] = []
    steps = traj.steps
    i = 0
    while i < len(steps):
        action = steps[i].action
        if action is None:
            i += 1
            continue
        j = i
        while j + 1 < len(steps):
            nxt = steps[j + 1].action
            if nxt is None or nxt.signature != action.signature:
                break
            if len(_varying_keys([s.action.arguments for s in steps[i : j + 2]])) > 1:  # type: ignore[union-attr]
                break
            j += 1
        if j - i + 1 >= min_length:
            varying = _varying_keys([s.action.arguments for s in steps[i : j + 1]])  # type: ignore[union-attr]
            runs.append(LoopRun(action.name, i, j, next(iter(varying), None)))
            i = j + 1
        else:
            i += 1
    return runs


def step_has_error(step: Step) -> bool:
    return bool(step.action_result and _ERROR_TEXT.search(step.action_result))


def has_completion_signal(traj: Trajectory) -> bool:
    last = traj.steps[-1]
    if last.action is not None and _COMPLETION_ACTION.search(last.action.name):
        return not step_has_error(last)
    return bool(_COMPLETION_TEXT.search(last.response))


def step_view(step: Step, *, thoughts: bool = True) -> dict[str, Any]:
    """JSON-ready view of a step for prompts."""
    view: dict[str, Any] = {"index": step.index, "response": step.response}
    if step.action is not None:
        view["action"] = step.action.model_dump(mode="json")
    if step.action_result is not None:
        view["action_result"] = step.action_result
    if thoughts and step.thoughts:
        view["thoughts"] = [{"text": t.text, "category": t.category.value} for t in step.thoughts]
    return view
