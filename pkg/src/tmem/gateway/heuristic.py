"""Keyword-based stand-in for the language model.

:class:`HeuristicResponder` answers every role from the structured prompt
inputs with simple deterministic rules. It powers the ``heuristic`` provider
kind (offline demos, random-corpus tests) and fills the gaps when scripted
fixtures are compiled. Its output is schema-valid but shallow.
"""

from __future__ import annotations

import re
from collections.abc import Mapping, Sequence
from typing import Any

from tmem.curation.generalize import EMAIL, repair
from tmem.extraction.signals import split_segments
from tmem.gateway.providers import LlmRequest

_THOUGHT_RULES = [
    ("validation", re.compile(r"\b(verify|verified|check|checked|confirm|confirmed|ensure|validate|double-check)\w*", re.I)),
    ("reflection", re.compile(r"\b(realiz\w*|mistake|wrong|should have|turns out|oops|in hindsight|apparently)\b", re.I)),
    ("planning", re.compile(r"\b(will|plan|next|first|then|need to|let me|going to|i'll)\b", re.I)),
]

_PATTERN_RULES = [
    ("error_recognition", re.compile(r"\b(error|failed|fails|mistake|wrong|realiz\w*|did not work|didn't work)\b", re.I)),
    ("self_correction", re.compile(r"\b(instead|retry|try again|fix|correct(?:ed|ing)?|add(?:ed)? the missing)\b", re.I)),
    ("validation", re.compile(r"\b(verify|confirm|double-check|make sure)\w*", re.I)),
    ("api_discovery", re.compile(r"\b(api docs|documentation|available apis|show_api\w*|look up the api)\b", re.I)),
    ("efficiency_awareness", re.compile(r"\b(more efficient|inefficient|bulk|one call|single call|at once)\b", re.I)),
    ("reflection", re.compile(r"\b(in hindsight|looking back|on reflection)\b", re.I)),
]

_RECOVERY_WORDS = re.compile(r"\b(retry|again|fail\w*|fix|error|broken|recover)\b", re.I)
_CREDENTIALS = re.compile(r"\b(?:passwords?|credentials|login details)\b", re.I)
_SERVICE = "service account credentials"


def _app_of(action_name: str) -> str:
    head = re.split(r"[._]", action_name, maxsplit=1)[0]
    return head.lower() or action_name.lower()


def _words(text: str, limit: int = 12) -> str:
    return " ".join(text.split()[:limit])


class HeuristicResponder:
    """Deterministic answers for all ten roles."""

    def __call__(self, request: LlmRequest) -> Mapping[str, Any]:
        handler = getattr(self, f"_{request.role.value}")
        return handler(request.inputs)

    # -- extraction --------------------------------------------------------------------

    def _thought_categorizer(self, inputs: Mapping[str, Any]) -> dict[str, Any]:
        out = []
        for seg in inputs.get("segments", []):
            category = "analytical"
            for name, rx in _THOUGHT_RULES:
                if rx.search(seg["text"]):
                    category = name
                    break
            out.append({"index": seg["index"], "category": category})
        return {"thoughts": out}

    def _pattern_detector(self, inputs: Mapping[str, Any]) -> dict[str, Any]:
        found = []
        for step in inputs.get("steps", []):
            seen: set[str] = set()
            for segment in split_segments(step.get("response", "")):
                for kind, rx in _PATTERN_RULES:
                    if kind not in seen and rx.search(segment):
                        seen.add(kind)
                        found.append(
                            {"step_index": step["index"], "kind": kind, "confidence": 0.7, "evidence": segment}
                        )
        return {"patterns": found}

    def _outcome_interpreter(self, inputs: Mapping[str, Any]) -> dict[str, Any]:
        report = inputs.get("evaluation_report") or {}
        diagnoses = [
            {"indicator": ind["name"], "diagnosis": ind.get("message") or f"{ind['name']} did not pass"}
            for ind in report.get("indicators", [])
            if not ind.get("passed")
        ]
        return {"kind": None, "rationale": "agrees with the rule-based classification", "diagnoses": diagnoses}

    def _attribution_analyst(self, inputs: Mapping[str, Any]) -> dict[str, Any]:
        steps: Sequence[Mapping[str, Any]] = inputs.get("steps", [])
        at = int(inputs.get("indicator_step", 0))
        kind = inputs.get("outcome_kind")
        errors_before = [
            s["index"] for s in steps if s["index"] <= at and re.search(r"error|fail|denied|invalid", s.get("action_result") or "", re.I)
        ]
        root = errors_before[0] if errors_before else at
        action = next((s["action"]["name"] for s in steps if s["index"] == at and "action" in s), "the failing call")
        improvements = {
            "failure": [f"Check the preconditions of {action} before calling it", "Read the error message before retrying"],
            "recovery": [f"When {action} fails, read the error and fix its cause before retrying"],
            "inefficiency": [f"Look for a single bulk operation instead of repeating {action}"],
            "success_pattern": ["Repeat the same sequence of checks and calls for similar tasks"],
        }[kind]
        return {
            "immediate_cause": {"step_index": at, "description": f"{inputs.get('indicator', '')}".strip() or "indicator step"},
            "proximate_cause": None,
            "root_cause": {"step_index": root, "description": "earliest related step"},
            "contributing_factors": [],
            "improvement_steps": improvements,
            "prerequisite_critical": False,
        }

    def _tip_generator(self, inputs: Mapping[str, Any]) -> dict[str, Any]:
        category = inputs["category"]
        attribution = inputs.get("attribution") or {}
        apps = list(inputs.get("apps") or [])
        task = _words(inputs.get("task_description", ""))
        steps = list(attribution.get("improvement_steps") or []) or ["Follow the steps that worked before"]
        lead = {
            "strategy": "Reuse the approach that completed",
            "recovery": "Recover from the error seen while attempting",
            "optimization": "Use a more efficient approach for",
        }[category]
        body = {
            "content": f"{lead}: {task}",
            "purpose": f"{category} guidance for similar tasks",
            "steps": steps,
            "trigger": f"When working on a task like: {task}",
            "negative_example": steps[0].replace("Look for", "Do not skip looking for") if category == "optimization" else None,
        }
        generic = dict(body, content=f"{lead} a similar task", trigger="When a similar task comes up")
        return {
            "tips": [
                dict(
                    body,
                    application_context=apps[0] if len(apps) == 1 else None,
                    task_category=None,
                    generic=generic,
                )
            ]
        }

    def _segmenter(self, inputs: Mapping[str, Any]) -> dict[str, Any]:
        steps = inputs.get("steps", [])
        runs: list[dict[str, Any]] = []
        for step in steps:
            app = _app_of(step["action"]["name"]) if "action" in step else None
            if runs and runs[-1]["app"] == app:
                runs[-1]["end"] = step["index"]
            else:
                runs.append({"app": app, "start": step["index"], "end": step["index"]})
        out = []
        for run in runs:
            apps = [run["app"]] if run["app"] else []
            what = f"{run['app']} operations" if run["app"] else "reasoning steps"
            out.append(
                {
                    "description": f"Carry out {what}",
                    "apps": apps,
                    "start": run["start"],
                    "end": run["end"],
                    "purpose": "advance the task",
                }
            )
        return {"subtasks": out}

    def _subtask_tipper(self, inputs: Mapping[str, Any]) -> dict[str, Any]:
        desc = inputs["description"].rstrip(".")
        tips = [
            {
                "category": "strategy",
                "content": f"Check the available operations before you {desc[0].lower() + desc[1:]}",
                "purpose": "avoid guessing call names and arguments",
                "steps": ["List the available operations", "Read the arguments each one needs"],
                "trigger": f"At the start of: {desc}",
                "negative_example": None,
            }
        ]
        failing = [s for s in inputs.get("steps", []) if re.search(r"error|fail|denied|invalid", s.get("action_result") or "", re.I)]
        if failing:
            tips.append(
                {
                    "category": "recovery",
                    "content": f"If a call fails during {desc[0].lower() + desc[1:]}, read the error before retrying",
                    "purpose": "turn errors into the next corrective call",
                    "steps": ["Read the error message", "Fix the missing input or precondition", "Retry once"],
                    "trigger": "A call in this subtask returns an error",
                    "negative_example": "Do not repeat the same failing call unchanged",
                }
            )
        return {"tips": tips}

    # -- curation and retrieval -------------------------------------------------------------

    def _generalizer(self, inputs: Mapping[str, Any]) -> dict[str, Any]:
        text = repair(EMAIL.sub(" ", inputs["description"]))
        if _CREDENTIALS.search(text):
            text = _CREDENTIALS.sub(_SERVICE, text, count=1)
            # an application name right before the credentials goes too
            text = re.sub(rf"(?<=\w) [A-Z]\w* (?={_SERVICE})", " ", text)
        return {"description": text}

    def _consolidator(self, inputs: Mapping[str, Any]) -> dict[str, Any]:
        members = sorted(inputs["members"], key=lambda m: m["id"])
        groups: dict[str, list[Mapping[str, Any]]] = {}
        for m in members:
            groups.setdefault(" ".join(m["content"].lower().split()), []).append(m)
        merged = []
        for group in groups.values():
            head = group[0]
            merged.append(
                {
                    "merged_from": [m["id"] for m in group],
                    "content": head["content"],
                    "purpose": head.get("purpose", ""),
                    "steps": head.get("steps", []),
                    "trigger": head.get("trigger", ""),
                    "negative_example": head.get("negative_example"),
                }
            )
        return {"canonical_description": members[0]["description"], "merged_tips": merged, "conflicts": []}

    def _retrieval_selector(self, inputs: Mapping[str, Any]) -> dict[str, Any]:
        task = inputs["task_description"]
        context = None
        for app in sorted(inputs.get("known_apps") or [], key=lambda a: (-len(a), a)):
            if re.search(rf"(?<!\w){re.escape(app)}(?!\w)", task, re.I):
                context = app
                break
        if _RECOVERY_WORDS.search(task):
            order = ["recovery", "strategy", "optimization"]
        else:
            order = ["strategy", "recovery", "optimization"]
        return {"application_context": context, "task_category": None, "preferred_categories": order}
