"""FastAPI service exposing the engine over HTTP."""

from tmem.service.app import create_app, status_for
from tmem.service.jobs import JobManager, JobState, JobStatus

__all__ = ["JobManager", "JobState", "JobStatus", "create_app", "status_for"]
