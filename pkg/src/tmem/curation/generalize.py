"""Description generalization with a deterministic post-check.

The generalizer model does the rewrite. Its answer must then pass three
checks: no entities (emails, known application names, id-like tokens),
canonical verbs only, and no purpose clauses. A violating answer is sent back
once with the problems listed; if the second answer still violates, the
problems are repaired mechanically.
"""

from __future__ import annotations

import re
from collections.abc import Iterable
from dataclasses import dataclass

from tmem import errors
from tmem.gateway import Gateway, Role
from tmem.store import StoreState

EMAIL = re.compile(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+")
# candidate tokens; the ones with three or more digits (order numbers, uuids,
# phone numbers) count as identifiers
ID_TOKEN = re.compile(r"(?<![\w-])[\w-]*\d[\w-]*(?![\w-])")
PURPOSE = re.compile(r"\s*,?\s*\b(in order to|in order for|so that|so as to|for the purpose of)\b.*$", re.I | re.S)

_VERBS: list[tuple[re.Pattern[str], str]] = [
    (re.compile(r"\b(?:logs|signs) (?:in|into)\b", re.I), "authenticates"),
    (re.compile(r"\b(?:logged|signed) (?:in|into)\b", re.I), "authenticated"),
    (re.compile(r"\b(?:logging|signing) (?:in|into)\b", re.I), "authenticating"),
    (re.compile(r"\b(?:log|sign) (?:in|into)\b", re.I), "authenticate"),
    (re.compile(r"\b(?:gets|fetches|obtains)\b", re.I), "retrieves"),
    (re.compile(r"\b(?:got|gotten|fetched|obtained)\b", re.I), "retrieved"),
    (re.compile(r"\b(?:getting|fetching|obtaining)\b", re.I), "retrieving"),
    (re.compile(r"\b(?:get|fetch|obtain)\b", re.I), "retrieve"),
]
_DANGLING = re.compile(r"(?:\s+\b(?:for|with|from|of|on|in|to|at|by|and|the|a|an|'s)\b)+\s*$", re.I)
_FALLBACK = "Perform subtask"


def _is_id_like(token: str) -> bool:
    return sum(ch.isdigit() for ch in token) >= 3


@dataclass(frozen=True)
class EntityLexicon:
    """Names that must not survive generalization (matched case-insensitively)."""

    names: frozenset[str] = frozenset()

    @classmethod
    def from_store(cls, state: StoreState, extra: Iterable[str] = ()) -> EntityLexicon:
        names: set[str] = set(extra)
        for traj in state.trajectories.values():
            names.update(traj.app_hints or ())
        names.update(t.application_context for t in state.tips.values() if t.application_context)
        return cls(frozenset(n.strip().lower() for n in names if n and n.strip()))

    def pattern(self) -> re.Pattern[str] | None:
        variants: set[str] = set()
        for name in self.names:
            variants.add(name)
            variants.add(name.replace("_", " "))
        if not variants:
            return None
        alternation = "|".join(re.escape(v) for v in sorted(variants, key=lambda v: (-len(v), v)))
        return re.compile(rf"(?<!\w)(?:{alternation})(?:'s)?(?!\w)", re.I)


def violations(text: str, lexicon: EntityLexicon = EntityLexicon()) -> list[str]:
    """Human-readable reasons ``text`` is not a generalized description."""
    found: list[str] = []
    for m in EMAIL.finditer(text):
        found.append(f"contains the email address {m.group(0)!r}")
    scrubbed = EMAIL.sub(" ", text)
    pattern = lexicon.pattern()
    if pattern is not None:
        for m in pattern.finditer(scrubbed):
            found.append(f"names the application {m.group(0)!r}")
    for m in ID_TOKEN.finditer(scrubbed):
        if _is_id_like(m.group(0)):
            found.append(f"contains the identifier {m.group(0)!r}")
    for rx, canonical in _VERBS:
        for m in rx.finditer(scrubbed):
            found.append(f"uses {m.group(0)!r} instead of {canonical!r}")
    m = PURPOSE.search(scrubbed)
    if m:
        found.append(f"keeps the purpose clause {m.group(0).strip()!r}")
    return found


def repair(text: str, lexicon: EntityLexicon = EntityLexicon()) -> str:
    """Mechanically remove whatever :func:`violations` complains about."""
    # removals can join words into a new violation, so repeat to a fixpoint
    out = text
    for _ in range(8):
        previous, out = out, _repair_once(out, lexicon)
        if out == previous or not violations(out, lexicon):
            break
    return out


def _repair_once(text: str, lexicon: EntityLexicon) -> str:
    out = PURPOSE.sub("", text)
    out = EMAIL.sub(" ", out)
    pattern = lexicon.pattern()
    if pattern is not None:
        out = pattern.sub(" ", out)
    out = ID_TOKEN.sub(lambda m: " " if _is_id_like(m.group(0)) else m.group(0), out)
    out = re.sub(r"\s+", " ", out)
    for rx, canonical in _VERBS:
        out = rx.sub(lambda m, c=canonical: c.capitalize() if m.group(0)[0].isupper() else c, out)
    out = re.sub(r"\s+", " ", out).strip(" ,;:-")
    out = re.sub(r"\s+([,.;:])", r"\1", out)
    previous = None
    while previous != out:
        previous = out
        out = _DANGLING.sub("", out).strip(" ,;:-")
    if not out:
        return _FALLBACK
    return out[0].upper() + out[1:]


def generalize_description(
    description: str, gateway: Gateway, lexicon: EntityLexicon = EntityLexicon()
) -> str:
    """Entity-free, verb-normalized, purpose-free rewrite of ``description``."""
    if not description or not description.strip():
        raise errors.EmptyText("cannot generalize an empty description")
    feedback = ""
    for _ in range(2):
        answer = gateway.ask(
            Role.GENERALIZER, {"description": description.strip(), "feedback": feedback}
        )["description"].strip()
        problems = violations(answer, lexicon)
        if not problems:
            return answer
        feedback = (
            f"Your previous answer {answer!r} was rejected because it "
            + "; ".join(problems)
            + ". Fix these problems."
        )
    return repair(answer, lexicon)
