"""Domain types shared across the pipeline.

All models are frozen pydantic models. Structural invariants that do not
depend on configuration are enforced at construction; the configurable ones
(step cap, id uniqueness) live in :func:`validate_trajectory`.
"""

from __future__ import annotations

import json
import math
import uuid
from collections.abc import Callable, Iterable, Mapping
from datetime import datetime, timezone
from enum import Enum
from typing import Annotated, Any, Optional

import pydantic
from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    field_serializer,
    field_validator,
    model_validator,
)

from tmem import errors

NORM_TOLERANCE = 1e-9
DEFAULT_STEP_CAP = 30

# Namespace for engine-generated ids (uuid5 keeps them reproducible).
ID_NAMESPACE = uuid.UUID("6f1d9c3e-3b8a-5d2e-9a41-7c0e2b5f8d10")

Clock = Callable[[], datetime]


def utc_now() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


def fixed_clock(when: datetime | str) -> Clock:
    """A clock that always returns ``when``; used by tests and golden runs."""
    value = _coerce_timestamp(when)
    return lambda: value


def _coerce_timestamp(value: Any) -> datetime:
    if isinstance(value, str):
        text = value.strip()
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        value = datetime.fromisoformat(text)
    if not isinstance(value, datetime):
        raise ValueError(f"not a timestamp: {value!r}")
    if value.tzinfo is None:
        value = value.replace(tzinfo=timezone.utc)
    return value.astimezone(timezone.utc).replace(microsecond=0)


def format_timestamp(value: datetime) -> str:
    return value.strftime("%Y-%m-%dT%H:%M:%SZ")


Timestamp = Annotated[
    datetime,
    BeforeValidator(_coerce_timestamp),
    PlainSerializer(format_timestamp, return_type=str),
]


def make_id(*parts: str) -> str:
    """UUID-style id derived from ``parts``; identical inputs give identical ids."""
    return str(uuid.uuid5(ID_NAMESPACE, "\x1f".join(parts)))


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


# --- enums ----------------------------------------------------------------------


class ThoughtCategory(str, Enum):
    ANALYTICAL = "analytical"
    PLANNING = "planning"
    VALIDATION = "validation"
    REFLECTION = "reflection"


class PatternKind(str, Enum):
    VALIDATION = "validation"
    REFLECTION = "reflection"
    SELF_CORRECTION = "self_correction"
    ERROR_RECOGNITION = "error_recognition"
    API_DISCOVERY = "api_discovery"
    EFFICIENCY_AWARENESS = "efficiency_awareness"


class OutcomeKind(str, Enum):
    CLEAN_SUCCESS = "clean_success"
    INEFFICIENT_SUCCESS = "inefficient_success"
    RECOVERY_SUCCESS = "recovery_success"
    FAILURE = "failure"

    @property
    def succeeded(self) -> bool:
        return self is not OutcomeKind.FAILURE


class OutcomeSource(str, Enum):
    GROUND_TRUTH = "ground_truth"
    INFERRED = "inferred"


class AttributionKind(str, Enum):
    FAILURE = "failure"
    RECOVERY = "recovery"
    INEFFICIENCY = "inefficiency"
    SUCCESS_PATTERN = "success_pattern"


class TipCategory(str, Enum):
    STRATEGY = "strategy"
    RECOVERY = "recovery"
    OPTIMIZATION = "optimization"


class Priority(str, Enum):
    CRITICAL = "critical"
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"

    @property
    def rank(self) -> int:
        """0 for the most urgent level."""
        return _PRIORITY_ORDER.index(self)


_PRIORITY_ORDER = [Priority.CRITICAL, Priority.HIGH, Priority.MEDIUM, Priority.LOW]


class Granularity(str, Enum):
    TASK = "task"
    SUBTASK = "subtask"


CATEGORY_FOR_ATTRIBUTION: dict[AttributionKind, TipCategory] = {
    AttributionKind.SUCCESS_PATTERN: TipCategory.STRATEGY,
    AttributionKind.FAILURE: TipCategory.RECOVERY,
    AttributionKind.RECOVERY: TipCategory.RECOVERY,
    AttributionKind.INEFFICIENCY: TipCategory.OPTIMIZATION,
}


# --- trajectory -------------------------------------------------------------------


class CognitivePattern(_Frozen):
    kind: PatternKind
    confidence: float = Field(ge=0.0, le=1.0)
    evidence: str = Field(min_length=1)


class Thought(_Frozen):
    text: str = Field(min_length=1)
    category: ThoughtCategory
    patterns: tuple[CognitivePattern, ...] = ()


class ActionRecord(_Frozen):
    """One tool/API invocation: operation name plus keyword arguments."""

    name: str = Field(min_length=1)
    arguments: dict[str, Any] = Field(default_factory=dict)

    @property
    def signature(self) -> tuple[str, tuple[str, ...]]:
        return self.name, tuple(sorted(self.arguments))


class Step(_Frozen):
    index: int = Field(ge=0)
    context: str = ""
    response: str
    thoughts: tuple[Thought, ...] = ()
    action: Optional[ActionRecord] = None
    action_result: Optional[str] = None


class Indicator(_Frozen):
    name: str = Field(min_length=1)
    passed: bool
    message: str = ""


class EvaluationReport(_Frozen):
    passed: bool
    indicators: tuple[Indicator, ...] = ()

    @property
    def failed_indicators(self) -> list[Indicator]:
        return [i for i in self.indicators if not i.passed]


class Trajectory(_Frozen):
    id: str = Field(min_length=1)
    task_description: str = Field(min_length=1)
    steps: tuple[Step, ...]
    evaluation_report: Optional[EvaluationReport] = None
    app_hints: Optional[frozenset[str]] = None
    created_at: Timestamp

    @field_validator("app_hints", mode="after")
    @classmethod
    def _lower_apps(cls, v: Optional[frozenset[str]]) -> Optional[frozenset[str]]:
        return None if v is None else frozenset(a.strip().lower() for a in v if a.strip())

    @field_serializer("app_hints")
    def _ser_apps(self, v: Optional[frozenset[str]]) -> Optional[list[str]]:
        return None if v is None else sorted(v)


def validate_trajectory(
    raw: Mapping[str, Any] | Trajectory,
    *,
    step_cap: int = DEFAULT_STEP_CAP,
    existing_ids: Iterable[str] = (),
    clock: Clock = utc_now,
) -> Trajectory:
    """Parse ``raw`` and enforce every trajectory invariant.

    Missing ``id`` and ``created_at`` are filled in (the id is derived from the
    document content so re-ingesting the same file yields the same id).
    """
    if isinstance(raw, Trajectory):
        data: dict[str, Any] = raw.model_dump()
    else:
        data = dict(raw)
    if not data.get("steps"):
        raise errors.EmptySteps("trajectory has no steps")
    if not data.get("id"):
        data["id"] = make_id("trajectory", canonical_json(_jsonable(data)))
    if data.get("created_at") is None:
        data["created_at"] = clock()
    try:
        traj = Trajectory.model_validate(data)
    except pydantic.ValidationError as exc:
        raise errors.ValidationError(str(exc)) from exc

    indices = [s.index for s in traj.steps]
    if indices != list(range(len(indices))):
        raise errors.NonContiguousIndices(f"step indices {indices} are not 0..{len(indices) - 1}")
    if len(traj.steps) > step_cap:
        raise errors.StepCapExceeded(len(traj.steps), step_cap)
    if traj.id in set(existing_ids):
        raise errors.DuplicateId(traj.id)
    last = len(traj.steps) - 1
    for step in traj.steps:
        if step.action is not None and step.action_result is None and step.index != last:
            raise errors.ValidationError(f"step {step.index} has an action but no result")
    return traj


def _jsonable(data: Any) -> Any:
    if isinstance(data, BaseModel):
        return data.model_dump(mode="json")
    if isinstance(data, Mapping):
        return {str(k): _jsonable(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [_jsonable(v) for v in data]
    if isinstance(data, (set, frozenset)):
        return sorted(_jsonable(v) for v in data)
    if isinstance(data, datetime):
        return format_timestamp(_coerce_timestamp(data))
    return data


# --- outcome analysis ---------------------------------------------------------------


class OutcomeClassification(_Frozen):
    kind: OutcomeKind
    source: OutcomeSource
    rationale: str
    low_confidence: bool = False


class CausalNode(_Frozen):
    step_index: int = Field(ge=0)
    description: str


class DecisionAttribution(_Frozen):
    outcome_kind: AttributionKind
    indicator: str = ""
    immediate_cause: CausalNode
    proximate_cause: Optional[CausalNode] = None
    root_cause: CausalNode
    contributing_factors: tuple[CausalNode, ...] = ()
    improvement_steps: tuple[str, ...] = ()
    prerequisite_critical: bool = False

    @model_validator(mode="after")
    def _check_steps(self) -> DecisionAttribution:
        needs = self.outcome_kind in (AttributionKind.FAILURE, AttributionKind.INEFFICIENCY)
        if needs and not any(s.strip() for s in self.improvement_steps):
            raise ValueError(f"{self.outcome_kind.value} attribution needs improvement steps")
        return self

    def nodes(self) -> list[CausalNode]:
        out = [self.immediate_cause, self.root_cause, *self.contributing_factors]
        if self.proximate_cause is not None:
            out.append(self.proximate_cause)
        return out


class PatternOccurrence(_Frozen):
    step_index: int = Field(ge=0)
    pattern: CognitivePattern


class SuccessAnalysis(_Frozen):
    kind: str = Field(pattern="^(clean|inefficient|recovery)$")
    evidence: tuple[CausalNode, ...] = ()


class IndicatorDiagnosis(_Frozen):
    indicator: str
    diagnosis: str


class IntermediateRepresentation(_Frozen):
    trajectory_id: str
    thoughts_by_step: dict[int, tuple[Thought, ...]]
    patterns: tuple[PatternOccurrence, ...] = ()
    outcome: OutcomeClassification
    success_analysis: Optional[SuccessAnalysis] = None
    evaluation_intelligence: Optional[tuple[IndicatorDiagnosis, ...]] = None
    task_intent: str
    step_count: int = Field(ge=1)
    warnings: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _success_iff_not_failure(self) -> IntermediateRepresentation:
        failed = self.outcome.kind is OutcomeKind.FAILURE
        if failed == (self.success_analysis is not None):
            raise ValueError("success_analysis must be present iff outcome is not failure")
        return self


# --- memory -------------------------------------------------------------------------


class Embedding(_Frozen):
    vector: tuple[float, ...]
    dim: int = Field(gt=0)

    @model_validator(mode="after")
    def _check(self) -> Embedding:
        if len(self.vector) != self.dim:
            raise ValueError(f"vector has length {len(self.vector)}, dim is {self.dim}")
        norm = math.sqrt(math.fsum(x * x for x in self.vector))
        if not math.isfinite(norm) or abs(norm - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"embedding norm {norm!r} is not 1")
        return self

    @classmethod
    def normalized(cls, values: Iterable[float]) -> Embedding:
        vec = [float(v) for v in values]
        # scale first so squaring neither underflows nor overflows
        peak = max((abs(v) for v in vec), default=0.0)
        if peak == 0.0 or not math.isfinite(peak):
            raise ValueError("cannot normalize a zero or non-finite vector")
        if peak != 1.0:
            vec = [v / peak for v in vec]
        norm = math.sqrt(math.fsum(v * v for v in vec))
        if norm == 0.0 or not math.isfinite(norm):
            raise ValueError("cannot normalize a zero or non-finite vector")
        return cls(vector=tuple(v / norm for v in vec), dim=len(vec))


class Tip(_Frozen):
    id: str = Field(min_length=1)
    category: TipCategory
    content: str = Field(min_length=1)
    purpose: str = ""
    steps: tuple[str, ...] = ()
    trigger: str = ""
    negative_example: Optional[str] = None
    application_context: Optional[str] = None
    task_category: Optional[str] = None
    priority: Priority
    granularity: Granularity
    subtask_description: Optional[str] = None
    generalized_description: Optional[str] = None
    # Text the tip is looked up by: task description for task tips, subtask or
    # canonical cluster description for subtask tips.
    index_description: str = Field(min_length=1)
    source_trajectory_ids: tuple[str, ...] = Field(min_length=1)
    source_outcome: str
    embedding: Embedding
    index_embedding: Embedding
    created_at: Timestamp

    @model_validator(mode="after")
    def _check(self) -> Tip:
        if self.granularity is Granularity.SUBTASK and not self.subtask_description:
            raise ValueError("subtask tips need a subtask_description")
        if self.embedding.dim != self.index_embedding.dim:
            raise ValueError("content and index embeddings differ in dimension")
        return self

    @property
    def is_generic(self) -> bool:
        return self.application_context is None

    @property
    def from_success(self) -> bool:
        return self.source_outcome != OutcomeKind.FAILURE.value


class Subtask(_Frozen):
    description: str = Field(min_length=1)
    generalized: bool = True
    apps: frozenset[str] = frozenset()
    step_range: tuple[int, int]
    purpose: str = ""
    flagged: bool = False

    @field_serializer("apps")
    def _ser_apps(self, v: frozenset[str]) -> list[str]:
        return sorted(v)

    @field_validator("step_range")
    @classmethod
    def _ordered(cls, v: tuple[int, int]) -> tuple[int, int]:
        if v[0] < 0 or v[1] < v[0]:
            raise ValueError(f"bad step range {v}")
        return v


class Cluster(_Frozen):
    id: str = Field(min_length=1)
    canonical_description: str = Field(min_length=1)
    canonical_embedding: Embedding
    member_tip_ids: tuple[str, ...] = Field(min_length=1)
