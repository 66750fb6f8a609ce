"""Simulated batch queue: FIFO start order, a cap on running jobs and a submit delay."""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

from ..deploy.config import Model, Resource
from .base import RunResult
from .directory import SandboxConnector


class JobCancelled(Exception):
    pass


class UnknownJob(KeyError):
    pass


@dataclass
class Job:
    id: int
    fn: Callable[[], Any]
    submitted_at: float
    eligible_at: float
    state: str = "queued"
    started_at: float | None = None
    finished_at: float | None = None
    result: Any = None
    error: BaseException | None = None


class SimBatchQueue:
    """A job table with queued -> running -> done transitions.

    At most ``max_concurrent_jobs`` run at once and jobs start in submission
    order, each no earlier than ``submit_delay_ms`` after submission.
    :meth:`wait` polls every ``poll_interval_ms`` like a batch client would.
    Times are ``time.monotonic()`` seconds.
    """

    def __init__(self, max_concurrent_jobs: int, submit_delay_ms: int = 0, poll_interval_ms: int = 50):
        if max_concurrent_jobs < 1:
            raise ValueError("max_concurrent_jobs must be >= 1")
        self.max_concurrent_jobs = max_concurrent_jobs
        self.submit_delay = submit_delay_ms / 1000
        self.poll_interval = poll_interval_ms / 1000
        self._jobs: dict[int, Job] = {}
        self._queue: list[Job] = []
        self._running = 0
        self.max_running_observed = 0
        self._ids = itertools.count(1)
        self._cond = threading.Condition()
        self._closed = False
        self._dispatcher = threading.Thread(target=self._dispatch, name="simbatch-dispatch", daemon=True)
        self._dispatcher.start()

    def submit(self, fn: Callable[[], Any]) -> int:
        with self._cond:
            if self._closed:
                raise JobCancelled("queue is shut down")
            now = time.monotonic()
            job = Job(next(self._ids), fn, now, now + self.submit_delay)
            self._jobs[job.id] = job
            self._queue.append(job)
            self._cond.notify_all()
            return job.id

    def _dispatch(self) -> None:
        with self._cond:
            while True:
                if self._closed:
                    return
                timeout = None
                if self._queue and self._running < self.max_concurrent_jobs:
                    head = self._queue[0]
                    now = time.monotonic()
                    if now >= head.eligible_at:
                        self._queue.pop(0)
                        self._start(head, now)
                        continue
                    timeout = head.eligible_at - now
                self._cond.wait(timeout)

    def _start(self, job: Job, now: float) -> None:
        job.state = "running"
        job.started_at = now
        self._running += 1
        self.max_running_observed = max(self.max_running_observed, self._running)
        threading.Thread(target=self._execute, args=(job,), name=f"simbatch-job-{job.id}", daemon=True).start()

    def _execute(self, job: Job) -> None:
        try:
            result, error = job.fn(), None
        except BaseException as exc:  # delivered to the waiter
            result, error = None, exc
        with self._cond:
            job.finished_at = time.monotonic()
            job.result, job.error = result, error
            job.state = "done"
            self._running -= 1
            self._cond.notify_all()

    def wait(self, job_id: int) -> Any:
        with self._cond:
            if job_id not in self._jobs:
                raise UnknownJob(job_id)
            job = self._jobs[job_id]
        while True:
            with self._cond:
                if job.state == "done":
                    if job.error is not None:
                        raise job.error
                    return job.result
                if job.state == "cancelled":
                    raise JobCancelled(f"job {job_id} cancelled")
            time.sleep(self.poll_interval)

    def running(self) -> int:
        with self._cond:
            return self._running

    def jobs(self) -> list[Job]:
        with self._cond:
            return [Job(j.id, j.fn, j.submitted_at, j.eligible_at, j.state, j.started_at, j.finished_at)
                    for j in self._jobs.values()]

    def cancel_queued(self) -> None:
        with self._cond:
            for job in self._queue:
                job.state = "cancelled"
            self._queue.clear()
            self._cond.notify_all()

    def shutdown(self) -> None:
        """Cancel queued jobs and stop dispatching; running jobs finish on their own."""
        with self._cond:
            self._closed = True
        self.cancel_queued()
        self._dispatcher.join()


class SimBatchConnector(SandboxConnector):
    """Sandbox sites behind a batch queue: ``run`` = submit + wait."""

    kind = "sim-batch"

    def __init__(self, model: Model, root, max_concurrent_jobs: int = 1, submit_delay_ms: int = 0,
                 poll_interval_ms: int = 50):
        super().__init__(model, root)
        self.queue_config = (max_concurrent_jobs, submit_delay_ms, poll_interval_ms)
        self.queue: SimBatchQueue | None = None

    def initialize(self) -> list[tuple[str, float]]:
        events = super().initialize()
        self.queue = SimBatchQueue(*self.queue_config)
        return events

    def run(self, resource: Resource, command: Sequence[str], env: Mapping[str, str],
            workdir: str) -> RunResult:
        if self.queue is None:
            raise RuntimeError("sim-batch connector used before initialize()")
        parent_run = super().run
        try:
            job = self.queue.submit(lambda: parent_run(resource, command, env, workdir))
            return self.queue.wait(job)
        except JobCancelled:
            return RunResult(-1, b"", b"job cancelled", 0.0, cancelled=True)

    def cancel(self) -> None:
        if self.queue is not None:
            self.queue.cancel_queued()
        super().cancel()

    def teardown(self) -> None:
        if self.queue is not None:
            self.queue.cancel_queued()
        super().cancel()
        if self.queue is not None:
            self.queue.shutdown()
            self.queue = None
