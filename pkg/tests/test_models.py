from __future__ import annotations

import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError as PydanticError

from conftest import CLOCK, TRAJECTORIES, make_tip, raw_trajectory
from tmem import errors
from tmem.models import (
    CausalNode,
    DecisionAttribution,
    Embedding,
    Granularity,
    Subtask,
    Trajectory,
    fixed_clock,
    format_timestamp,
    validate_trajectory,
)


def steps(n: int) -> list[dict]:
    return [
        {"index": i, "response": f"step {i}", "action": {"name": "app.call", "arguments": {"i": i}}, "action_result": "ok"}
        for i in range(n)
    ]


def doc(n: int = 4, **extra) -> dict:
    return {"id": "t", "task_description": "Do a thing", "created_at": CLOCK, "steps": steps(n), **extra}


def test_four_contiguous_steps_accepted():
    traj = validate_trajectory(doc(4))
    assert [s.index for s in traj.steps] == [0, 1, 2, 3]


def test_step_cap_default_30():
    validate_trajectory(doc(30))
    with pytest.raises(errors.StepCapExceeded) as info:
        validate_trajectory(doc(31))
    assert info.value.cap == 30


def test_step_cap_configurable():
    with pytest.raises(errors.StepCapExceeded):
        validate_trajectory(doc(5), step_cap=4)


def test_gap_in_indices():
    d = doc(3)
    d["steps"][2]["index"] = 3
    with pytest.raises(errors.NonContiguousIndices):
        validate_trajectory(d)


def test_empty_steps():
    with pytest.raises(errors.EmptySteps):
        validate_trajectory(doc(0))


def test_duplicate_id():
    with pytest.raises(errors.DuplicateId):
        validate_trajectory(doc(2), existing_ids={"t"})


def test_action_without_result_only_on_last_step():
    d = doc(3)
    d["steps"][2]["action_result"] = None
    validate_trajectory(d)
    d["steps"][1]["action_result"] = None
    with pytest.raises(errors.ValidationError):
        validate_trajectory(d)


def test_missing_id_is_derived_from_content():
    d = doc(2)
    del d["id"]
    a = validate_trajectory(d)
    b = validate_trajectory(dict(d))
    assert a.id == b.id and a.id


def test_missing_created_at_uses_clock():
    d = doc(2)
    del d["created_at"]
    traj = validate_trajectory(d, clock=fixed_clock("2024-05-06T07:08:09Z"))
    assert format_timestamp(traj.created_at) == "2024-05-06T07:08:09Z"


def test_unknown_field_rejected():
    with pytest.raises(errors.ValidationError):
        validate_trajectory(doc(2, surprise=1))


def test_app_hints_lowercased():
    traj = validate_trajectory(doc(1, app_hints=["Spotify", " Venmo "]))
    assert traj.app_hints == frozenset({"spotify", "venmo"})


@pytest.mark.parametrize("path", sorted(TRAJECTORIES.glob("*.json")), ids=lambda p: p.stem)
def test_fixture_round_trip(path):
    traj = validate_trajectory(json.loads(path.read_text()))
    again = Trajectory.model_validate_json(traj.model_dump_json())
    assert again == traj
    assert json.loads(again.model_dump_json()) == json.loads(traj.model_dump_json())


def test_fixture_set_has_required_shapes():
    names = {p.stem for p in TRAJECTORIES.glob("*.json")}
    assert {"clean_checkout", "empty_cart_loop", "payment_recovery", "hard_failure", "single_step"} <= names
    assert len(names) >= 6
    multi_app = [n for n in names if len(raw_trajectory(n).get("app_hints") or []) >= 2]
    assert multi_app


_text = st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=0x2FF), min_size=1, max_size=30)
_step = st.fixed_dictionaries(
    {"response": _text, "context": _text},
    optional={"action": st.fixed_dictionaries({"name": st.from_regex(r"[a-z]{1,8}\.[a-z_]{1,8}", fullmatch=True)})},
)


@settings(max_examples=60, deadline=None)
@given(st.lists(_step, min_size=1, max_size=8), _text, st.booleans())
def test_round_trip_property(raw_steps, task, with_report):
    raw = {
        "task_description": task,
        "steps": [
            {**s, "index": i, **({"action_result": "r"} if "action" in s else {})} for i, s in enumerate(raw_steps)
        ],
    }
    if with_report:
        raw["evaluation_report"] = {"passed": True, "indicators": [{"name": "x", "passed": True}]}
    traj = validate_trajectory(raw, clock=fixed_clock(CLOCK))
    assert Trajectory.model_validate(json.loads(traj.model_dump_json())) == traj


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=64).filter(lambda v: any(v)))
def test_normalized_embedding_has_unit_norm(values):
    emb = Embedding.normalized(values)
    assert abs(math.sqrt(math.fsum(x * x for x in emb.vector)) - 1.0) <= 1e-9
    assert emb.dim == len(values)


def test_embedding_rejects_non_unit_vector():
    with pytest.raises(PydanticError):
        Embedding(vector=(1.0, 1.0), dim=2)
    with pytest.raises(PydanticError):
        Embedding(vector=(1.0,), dim=2)


def test_subtask_tip_needs_description():
    with pytest.raises(PydanticError):
        make_tip("x", "a subtask", granularity=Granularity.SUBTASK, subtask_description=None)


def test_tip_needs_provenance():
    with pytest.raises(PydanticError):
        make_tip("x", "task", sources=())


def test_failure_attribution_needs_improvement_steps():
    node = CausalNode(step_index=0, description="d")
    with pytest.raises(PydanticError):
        DecisionAttribution(outcome_kind="failure", immediate_cause=node, root_cause=node)
    DecisionAttribution(outcome_kind="success_pattern", immediate_cause=node, root_cause=node)


def test_subtask_range_ordered():
    with pytest.raises(PydanticError):
        Subtask(description="x", step_range=(3, 1))


def test_models_are_immutable():
    traj = validate_trajectory(doc(1))
    with pytest.raises(PydanticError):
        traj.id = "other"


def test_timestamp_format_is_second_precision_utc():
    traj = validate_trajectory(doc(1, created_at="2025-01-15T10:00:00.123456+02:00"))
    assert format_timestamp(traj.created_at) == "2025-01-15T08:00:00Z"
