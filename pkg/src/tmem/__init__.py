"""Trajectory-informed memory for LLM agents.

Turns agent execution traces into categorized, provenance-tracked tips,
curates them by clustering and merging, and retrieves the relevant ones as
prompt guidelines for new tasks.
"""

from tmem.engine import Engine
from tmem.models import Tip, Trajectory, validate_trajectory
from tmem.retrieval import RetrievalConfig, Strategy, render_guidelines, retrieve
from tmem.store import MemoryStore

__version__ = "0.1.0"

__all__ = [
    "Engine",
    "MemoryStore",
    "RetrievalConfig",
    "Strategy",
    "Tip",
    "Trajectory",
    "__version__",
    "render_guidelines",
    "retrieve",
    "validate_trajectory",
]
