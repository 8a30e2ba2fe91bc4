"""JSON schemas for every structured LLM role.

Each role answers with a JSON object validated against the schema registered
under the role's name. Schema ids are stable strings of the form
``<role>/v<N>``; bump the version whenever a payload shape changes.
"""

from __future__ import annotations

from enum import Enum
from typing import Any

from jsonschema import Draft202012Validator


class Role(str, Enum):
    THOUGHT_CATEGORIZER = "thought_categorizer"
    PATTERN_DETECTOR = "pattern_detector"
    OUTCOME_INTERPRETER = "outcome_interpreter"
    ATTRIBUTION_ANALYST = "attribution_analyst"
    TIP_GENERATOR = "tip_generator"
    SEGMENTER = "segmenter"
    SUBTASK_TIPPER = "subtask_tipper"
    GENERALIZER = "generalizer"
    CONSOLIDATOR = "consolidator"
    RETRIEVAL_SELECTOR = "retrieval_selector"


_STR = {"type": "string"}
_TEXT = {"type": "string", "minLength": 1}
_OPT_STR = {"type": ["string", "null"]}
_STEPS = {"type": "array", "items": _TEXT}
_NODE = {
    "type": "object",
    "required": ["step_index", "description"],
    "properties": {"step_index": {"type": "integer", "minimum": 0}, "description": _STR},
}
_CATEGORY = {"enum": ["strategy", "recovery", "optimization"]}
_OUTCOME = {"enum": ["clean_success", "inefficient_success", "recovery_success", "failure"]}
_TIP_BODY = {
    "content": _TEXT,
    "purpose": _STR,
    "steps": _STEPS,
    "trigger": _STR,
    "negative_example": _OPT_STR,
}


def _obj(required: list[str], **properties: Any) -> dict[str, Any]:
    return {"type": "object", "required": required, "properties": properties}


def _array(items: dict[str, Any], **extra: Any) -> dict[str, Any]:
    return {"type": "array", "items": items, **extra}


_ROLE_SCHEMAS: dict[Role, dict[str, Any]] = {
    Role.THOUGHT_CATEGORIZER: _obj(
        ["thoughts"],
        thoughts=_array(
            _obj(
                ["index", "category"],
                index={"type": "integer", "minimum": 0},
                category={"enum": ["analytical", "planning", "validation", "reflection"]},
            )
        ),
    ),
    Role.PATTERN_DETECTOR: _obj(
        ["patterns"],
        patterns=_array(
            _obj(
                ["step_index", "kind", "confidence", "evidence"],
                step_index={"type": "integer", "minimum": 0},
                kind={
                    "enum": [
                        "validation",
                        "reflection",
                        "self_correction",
                        "error_recognition",
                        "api_discovery",
                        "efficiency_awareness",
                    ]
                },
                confidence={"type": "number", "minimum": 0, "maximum": 1},
                evidence=_TEXT,
            )
        ),
    ),
    Role.OUTCOME_INTERPRETER: _obj(
        ["kind", "rationale"],
        kind={"anyOf": [_OUTCOME, {"type": "null"}]},
        rationale=_STR,
        diagnoses=_array(_obj(["indicator", "diagnosis"], indicator=_TEXT, diagnosis=_STR)),
    ),
    Role.ATTRIBUTION_ANALYST: _obj(
        ["immediate_cause", "root_cause", "improvement_steps"],
        immediate_cause=_NODE,
        proximate_cause={"anyOf": [_NODE, {"type": "null"}]},
        root_cause=_NODE,
        contributing_factors=_array(_NODE),
        improvement_steps=_STEPS,
        prerequisite_critical={"type": "boolean"},
    ),
    Role.TIP_GENERATOR: _obj(
        ["tips"],
        tips=_array(
            _obj(
                ["content"],
                **_TIP_BODY,
                application_context=_OPT_STR,
                task_category=_OPT_STR,
                generic={"anyOf": [_obj(["content"], **_TIP_BODY), {"type": "null"}]},
            )
        ),
    ),
    Role.SEGMENTER: _obj(
        ["subtasks"],
        subtasks=_array(
            _obj(
                ["description", "start", "end"],
                description=_TEXT,
                apps=_array(_TEXT),
                start={"type": "integer", "minimum": 0},
                end={"type": "integer", "minimum": 0},
                purpose=_STR,
            )
        ),
    ),
    Role.SUBTASK_TIPPER: _obj(
        ["tips"],
        tips=_array(_obj(["content"], category=_CATEGORY, **_TIP_BODY)),
    ),
    Role.GENERALIZER: _obj(["description"], description=_TEXT),
    Role.CONSOLIDATOR: _obj(
        ["canonical_description", "merged_tips"],
        canonical_description=_TEXT,
        merged_tips=_array(
            _obj(["merged_from", "content"], merged_from=_array(_TEXT, minItems=1), **_TIP_BODY),
            minItems=1,
        ),
        conflicts=_array(_obj(["tip_ids"], tip_ids=_array(_TEXT, minItems=2), note=_STR)),
    ),
    Role.RETRIEVAL_SELECTOR: _obj(
        ["preferred_categories"],
        application_context=_OPT_STR,
        task_category=_OPT_STR,
        preferred_categories=_array(_CATEGORY, uniqueItems=True),
    ),
}

SCHEMA_VERSION = 1


def schema_id(role: Role | str) -> str:
    return f"{Role(role).value}/v{SCHEMA_VERSION}"


SCHEMAS: dict[str, dict[str, Any]] = {schema_id(r): s for r, s in _ROLE_SCHEMAS.items()}
_VALIDATORS = {sid: Draft202012Validator(s) for sid, s in SCHEMAS.items()}


def schema_errors(schema: str, payload: Any) -> list[str]:
    """Return human-readable violations (empty when ``payload`` conforms)."""
    validator = _VALIDATORS[schema]
    return [
        f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
        for e in sorted(validator.iter_errors(payload), key=lambda e: list(e.absolute_path))
    ]
