"""Rebuild fixtures/scripted_provider.json from fixtures/scripted/rules.json.

Run after changing prompt templates, extraction logic or the rules:

    python3 scripts/compile_scripted_fixture.py
"""

from __future__ import annotations

import sys
from pathlib import Path

from tmem.gateway import dump_fixture
from tmem.scenario import compile_fixture

ROOT = Path(__file__).resolve().parent.parent
RULES = ROOT / "fixtures" / "scripted" / "rules.json"
OUTPUT = ROOT / "fixtures" / "scripted_provider.json"


def main() -> int:
    entries = compile_fixture(RULES)
    dump_fixture(entries, OUTPUT)
    print(f"wrote {len(entries)} entries to {OUTPUT.relative_to(ROOT)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
