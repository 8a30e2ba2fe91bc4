from __future__ import annotations

import json

import pytest
from jsonschema import Draft202012Validator

from conftest import FIXTURES, ROOT, RULES, SCRIPTED, TRAJECTORIES
from tmem.gateway import load_fixture
from tmem.models import validate_trajectory
from tmem.scenario import compile_fixture

SCHEMA = json.loads((ROOT / "docs" / "trajectory.schema.json").read_text(encoding="utf-8"))
TRAJECTORY_FILES = sorted(TRAJECTORIES.glob("*.json"))


def test_scripted_fixture_is_up_to_date():
    # fails when a prompt template, a rule or the pipeline changes; rerun
    # scripts/compile_scripted_fixture.py to refresh it
    assert compile_fixture(RULES) == load_fixture(SCRIPTED)


def test_schema_is_valid():
    Draft202012Validator.check_schema(SCHEMA)


@pytest.mark.parametrize("path", TRAJECTORY_FILES, ids=lambda p: p.stem)
def test_trajectory_fixtures_validate(path):
    raw = json.loads(path.read_text(encoding="utf-8"))
    assert list(Draft202012Validator(SCHEMA).iter_errors(raw)) == []
    traj = validate_trajectory(raw)
    assert traj.id == raw["id"]


def test_schema_rejects_what_the_model_rejects():
    raw = json.loads(TRAJECTORY_FILES[0].read_text(encoding="utf-8"))
    bad = dict(raw, steps=[])
    assert list(Draft202012Validator(SCHEMA).iter_errors(bad))


def test_fixture_directory_layout():
    assert TRAJECTORY_FILES
    assert (FIXTURES / "scripted" / "rules.json").is_file()
