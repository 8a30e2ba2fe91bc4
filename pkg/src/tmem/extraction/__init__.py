"""Phase one: trajectory analysis and tip extraction."""

from tmem.extraction.attribution import OutcomeIndicator, attribute_decisions, detect_indicators
from tmem.extraction.intelligence import enrich, extract_intelligence, preliminary_outcome
from tmem.extraction.signals import LoopRun, detect_loops, has_completion_signal, split_segments
from tmem.extraction.subtasks import clip_ranges, generate_subtask_tips, segment_subtasks
from tmem.extraction.tips import generate_task_tips, task_tip_priority

__all__ = [
    "LoopRun",
    "OutcomeIndicator",
    "attribute_decisions",
    "clip_ranges",
    "detect_indicators",
    "detect_loops",
    "enrich",
    "extract_intelligence",
    "generate_subtask_tips",
    "generate_task_tips",
    "has_completion_signal",
    "preliminary_outcome",
    "segment_subtasks",
    "split_segments",
    "task_tip_priority",
]
