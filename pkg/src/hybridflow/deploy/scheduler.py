"""Slot accounting and FIFO reservation of service resources."""

from __future__ import annotations

import itertools
import threading
from collections import deque
from typing import Callable, Sequence

from .config import DeploymentPlan, Resource


class SchedulingCancelled(Exception):
    pass


def select_resources(free_slots: Sequence[int], r: int,
                     locality: Callable[[int], int] | None = None) -> list[int]:
    """Pick ``r`` resource indices with a free slot, most local data first.

    Ties go to the lowest index.  Returns ``[]`` when fewer than ``r`` are free.
    """
    free = [i for i, n in enumerate(free_slots) if n > 0]
    if len(free) < r:
        return []
    score = locality or (lambda i: 0)
    return sorted(free, key=lambda i: (-score(i), i))[:r]


class _ServiceQueue:
    def __init__(self, model: str, service: str, resources: int, slots: int):
        self.model = model
        self.service = service
        self.slots = slots
        self.free = [slots] * resources
        self.waiting: deque[int] = deque()
        self.cond = threading.Condition()


class Scheduler:
    """One FIFO queue per service; a reservation takes ``r`` resources at once or waits.

    The head of the queue blocks later requests, so start order equals
    submission order per service.  Waiting never holds the queue lock.
    """

    def __init__(self, plan: DeploymentPlan):
        self._queues: dict[tuple[str, str], _ServiceQueue] = {}
        for m in plan.models:
            for s in m.services:
                self._queues[(m.name, s.name)] = _ServiceQueue(m.name, s.name, s.resource_count,
                                                               s.slots_per_resource)
        self._tickets = itertools.count()
        self._cancelled = False

    def reserve(self, model: str, service: str, r: int,
                locality: Callable[[Resource], int] | None = None) -> list[Resource]:
        q = self._queues[(model, service)]
        if r > len(q.free):
            raise ValueError(f"{model}/{service} has {len(q.free)} resources, {r} requested")
        ticket = next(self._tickets)

        def score(i: int) -> int:
            return locality(Resource(model, service, i)) if locality else 0

        with q.cond:
            q.waiting.append(ticket)
            try:
                while True:
                    if self._cancelled:
                        raise SchedulingCancelled(f"{model}/{service} reservation cancelled")
                    if q.waiting[0] == ticket:
                        chosen = select_resources(q.free, r, score)
                        if chosen:
                            for i in chosen:
                                q.free[i] -= 1
                            q.waiting.popleft()
                            q.cond.notify_all()
                            return [Resource(model, service, i) for i in chosen]
                    q.cond.wait()
            except BaseException:
                if ticket in q.waiting:
                    q.waiting.remove(ticket)
                    q.cond.notify_all()
                raise

    def release(self, resources: Sequence[Resource]) -> None:
        for res in resources:
            q = self._queues[(res.model, res.service)]
            with q.cond:
                if q.free[res.index] >= q.slots:
                    raise RuntimeError(f"release of {res} without reservation")
                q.free[res.index] += 1
                q.cond.notify_all()

    def free_slots(self, model: str, service: str) -> list[int]:
        q = self._queues[(model, service)]
        with q.cond:
            return list(q.free)

    def cancel(self) -> None:
        self._cancelled = True
        for q in self._queues.values():
            with q.cond:
                q.cond.notify_all()
