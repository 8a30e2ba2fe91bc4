"""Seeded random trajectories for corpus-level properties.

Tasks are drawn from a small pool of templates and apps so that extraction
produces overlapping tips and consolidation has clusters to merge.
"""

from __future__ import annotations

import json
import random
from typing import Any

APPS = {
    "amazon": ["show_cart", "add_to_cart", "remove_from_cart", "checkout", "show_orders"],
    "venmo": ["show_payment_requests", "approve_payment_request", "send_money", "show_balance"],
    "spotify": ["show_playlists", "show_song", "play_song", "show_library"],
    "gmail": ["show_inbox", "send_email", "search_emails", "mark_as_read"],
}
TASKS = [
    "Buy the items in my {app} cart",
    "Approve every pending request in {app}",
    "Find the most played song in my {app} library",
    "Reply to the latest message in {app}",
    "Clean up old entries in {app}",
]
USERS = ["john.doe@email.com", "ann.lee@mail.org", "sam.k@work.net"]


def _step(index: int, thought: str, action: str, args: dict[str, Any], result: str) -> dict[str, Any]:
    return {
        "index": index,
        "context": "",
        "response": f"Thought: {thought}\nAction: {action}",
        "action": {"name": action, "arguments": args},
        "action_result": result,
    }


def random_trajectory(rng: random.Random, traj_id: str) -> dict[str, Any]:
    app = rng.choice(sorted(APPS))
    task = rng.choice(TASKS).format(app=app.capitalize())
    steps: list[dict[str, Any]] = []
    user = rng.choice(USERS)
    steps.append(
        _step(0, f"I need the password for {user} first.", "supervisor.show_account_passwords", {}, json.dumps([{"account_name": app, "password": "pw"}]))
    )
    steps.append(_step(1, f"Now log in to {app}.", f"{app}.login", {"username": user}, json.dumps({"access_token": "tok"})))
    failed = False
    for _ in range(rng.randint(1, 6)):
        verb = rng.choice(APPS[app])
        item = rng.randint(100, 999)
        roll = rng.random()
        if roll < 0.2:
            result = f"Error: {verb} failed for item {item}: not authorized."
            thought = f"Try {verb} on item {item}."
            failed = True
        elif roll < 0.35 and failed:
            result = f"Retried {verb} successfully."
            thought = f"That failed earlier, so verify and retry {verb}."
            failed = False
        else:
            result = f"{verb} ok for item {item}."
            thought = f"Call {verb} for item {item}."
        steps.append(_step(len(steps), thought, f"{app}.{verb}", {"item_id": item}, result))
    passed = rng.random() < 0.6 and not failed
    steps.append(_step(len(steps), "Mark the task as done.", "supervisor.complete_task", {}, "Task completed."))
    raw: dict[str, Any] = {
        "id": traj_id,
        "task_description": task,
        "app_hints": [app, "supervisor"],
        "created_at": "2025-01-15T10:00:00Z",
        "steps": steps,
    }
    if rng.random() < 0.8:
        raw["evaluation_report"] = {
            "passed": passed,
            "indicators": [{"name": "goal", "passed": passed, "message": "" if passed else "goal not reached"}],
        }
    return raw


def random_corpus(seed: int, size: int | None = None) -> list[dict[str, Any]]:
    rng = random.Random(seed)
    n = size if size is not None else rng.randint(2, 8)
    return [random_trajectory(rng, f"c{seed}-t{i}") for i in range(n)]
