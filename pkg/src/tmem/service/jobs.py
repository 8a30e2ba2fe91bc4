"""Background extraction jobs: queued -> running -> done | failed."""

from __future__ import annotations

import logging
import threading
import uuid
from concurrent.futures import Future, ThreadPoolExecutor
from enum import Enum
from typing import Optional

from pydantic import BaseModel

from tmem import errors
from tmem.engine import Engine, ExtractionSummary, ExtractMode

log = logging.getLogger(__name__)


class JobState(str, Enum):
    QUEUED = "queued"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


class JobStatus(BaseModel):
    id: str
    kind: str = "extract"
    trajectory_id: str
    mode: ExtractMode
    state: JobState
    result: Optional[ExtractionSummary] = None
    error: Optional[str] = None


class JobManager:
    def __init__(self, engine: Engine, workers: int = 2) -> None:
        self.engine = engine
        self._pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="tmem-job")
        self._jobs: dict[str, JobStatus] = {}
        self._futures: dict[str, Future[None]] = {}
        self._lock = threading.Lock()

    def submit(self, trajectory_id: str, mode: ExtractMode) -> JobStatus:
        job = JobStatus(id=str(uuid.uuid4()), trajectory_id=trajectory_id, mode=mode, state=JobState.QUEUED)
        with self._lock:
            self._jobs[job.id] = job
            self._futures[job.id] = self._pool.submit(self._run, job.id)
        return job

    def _update(self, job_id: str, **changes: object) -> None:
        with self._lock:
            self._jobs[job_id] = self._jobs[job_id].model_copy(update=changes)

    def _run(self, job_id: str) -> None:
        job = self.get(job_id)
        self._update(job_id, state=JobState.RUNNING)
        try:
            summary = self.engine.extract(job.trajectory_id, job.mode)
        except Exception as exc:  # a failed job must never take the worker down
            log.warning("extraction job %s failed: %s", job_id, exc)
            self._update(job_id, state=JobState.FAILED, error=f"{type(exc).__name__}: {exc}")
        else:
            self._update(job_id, state=JobState.DONE, result=summary)

    def get(self, job_id: str) -> JobStatus:
        with self._lock:
            try:
                return self._jobs[job_id]
            except KeyError:
                raise errors.UnknownId(f"no job {job_id}") from None

    def wait(self, job_id: str, timeout: float | None = None) -> JobStatus:
        with self._lock:
            future = self._futures.get(job_id)
        if future is None:
            raise errors.UnknownId(f"no job {job_id}")
        future.result(timeout=timeout)
        return self.get(job_id)

    def shutdown(self) -> None:
        self._pool.shutdown(wait=True)
