from __future__ import annotations

import re

import pytest

from conftest import ROOT
from tmem import prompts
from tmem.gateway import Role


def _documented() -> dict[str, set[str]]:
    table: dict[str, set[str]] = {}
    for line in (ROOT / "docs" / "prompts.md").read_text(encoding="utf-8").splitlines():
        m = re.match(r"\|\s*`(\w+)`\s*\|(.*)\|\s*$", line)
        if m:
            table[m.group(1)] = set(re.findall(r"`\$(\w+)`", m.group(2)))
    return table


def test_documented_table_matches_templates():
    assert _documented() == {role.value: prompts.placeholders(role.value) for role in Role}


@pytest.mark.parametrize("role", list(Role))
def test_template_has_version_tag(role):
    first = prompts.template(role.value).template.splitlines()[0]
    assert first == f"# template: {role.value} v1"


def test_render_is_pure_and_sorted():
    inputs = {"members": [{"b": 1, "a": 2}]}
    a = prompts.render("consolidator", inputs)
    assert a == prompts.render("consolidator", {"members": [{"a": 2, "b": 1}]})
    assert '"a": 2,\n' in a


def test_missing_input_is_an_error():
    with pytest.raises(KeyError):
        prompts.render("generalizer", {"description": "x"})
