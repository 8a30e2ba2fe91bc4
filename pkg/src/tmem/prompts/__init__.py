"""Versioned prompt templates, one per LLM role.

Templates are ``string.Template`` files (``$name`` placeholders). Non-string
values are inserted as indented, key-sorted JSON so a prompt is a pure
function of its inputs.
"""

from __future__ import annotations

import json
import string
from collections.abc import Mapping
from functools import lru_cache
from importlib import resources
from typing import Any


@lru_cache(maxsize=None)
def template(name: str) -> string.Template:
    text = resources.files(__package__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return string.Template(text)


def placeholders(name: str) -> set[str]:
    return {
        m.group("named") or m.group("braced")
        for m in template(name).pattern.finditer(template(name).template)
        if m.group("named") or m.group("braced")
    }


def render(name: str, inputs: Mapping[str, Any]) -> str:
    values = {
        key: value if isinstance(value, str) else json.dumps(value, indent=2, sort_keys=True, ensure_ascii=False)
        for key, value in inputs.items()
    }
    return template(name).substitute(values)
