"""Continuation abstraction: cooperatively scheduled units of work.

A task body is a generator function. Whenever the body (or a synchronization
primitive it delegates to via ``yield from``) needs to give up its worker, it
yields a scheduler command; the worker trampoline interprets the command and
decides what runs next. Between suspensions a continuation runs on exactly one
worker; it may migrate to another worker only while suspended.

Tasks must not block their OS thread on thread-level primitives
(threading.Lock.acquire, queue.Queue.get, ...): that would stall every other
task sharing the worker. Use the task-aware primitives from
:mod:`cesched.sync` instead.
"""

from __future__ import annotations

import itertools
import threading
import time
from dataclasses import dataclass
from enum import IntEnum
from typing import Generator, Optional


class TaskState(IntEnum):
    CREATED = 0
    RUNNING = 1
    SUSPENDED = 2
    COMPLETED = 3


class TaskStateError(RuntimeError):
    """An operation was applied to a continuation in an incompatible state."""


class UsageError(RuntimeError):
    """A runtime or primitive API was called outside its contract."""


class _Command:
    """Scheduler command yielded from a task body to the worker trampoline."""

    __slots__ = ("name",)

    def __init__(self, name: str):
        self.name = name

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"<cmd {self.name}>"


#: Reschedule the current task at the back of the worker's local deque.
CMD_YIELD = _Command("yield")
#: Suspend; some other component has taken responsibility for resuming us.
CMD_PARK = _Command("park")
#: Suspend to the injector and directly resume the staged target on this worker.
CMD_SWITCH = _Command("switch")

_task_ids = itertools.count()


@dataclass(frozen=True)
class TaskOutcome:
    """Completion record, emitted exactly once per spawned task."""

    task_id: int
    completed_at_ns: int
    failed: bool
    error: Optional[BaseException] = None


class Continuation:
    """A suspendable unit of work, resumable exactly once per suspension.

    The state machine (CREATED -> RUNNING <-> SUSPENDED -> COMPLETED) is
    guarded by a small lock so that a resumer racing with an in-flight
    suspension spins until the suspension lands instead of double-resuming.
    """

    __slots__ = (
        "task_id",
        "name",
        "_gen",
        "_state",
        "_state_lock",
        "outcome",
        # intrusive waiter-queue fields: live here so that contended
        # lock/unlock paths allocate nothing
        "_wait_next",
        "_wait_enq_ns",
        "_wait_tag",
        "_wait_n",
    )

    def __init__(self, gen: Generator, name: str = ""):
        if not hasattr(gen, "send"):
            raise UsageError("task body must be a generator (did you call the function?)")
        self.task_id = next(_task_ids)
        self.name = name
        self._gen = gen
        self._state = TaskState.CREATED
        self._state_lock = threading.Lock()
        self.outcome: Optional[TaskOutcome] = None
        self._wait_next: Optional[Continuation] = None
        self._wait_enq_ns = 0
        self._wait_tag = 0
        self._wait_n = 0

    @property
    def state(self) -> TaskState:
        return self._state

    def _claim_for_run(self) -> None:
        """Atomically transition to RUNNING, spinning out an in-flight suspension.

        A waiter can be popped from a queue a few instructions before its
        worker finishes parking it; the resuming side waits here until the
        SUSPENDED store lands. Raises TaskStateError on COMPLETED.
        """
        while True:
            with self._state_lock:
                st = self._state
                if st is TaskState.SUSPENDED or st is TaskState.CREATED:
                    self._state = TaskState.RUNNING
                    return
                if st is TaskState.COMPLETED:
                    raise TaskStateError(
                        f"task {self.task_id} resumed after completion"
                    )
            # RUNNING: suspension in flight on another worker.
            time.sleep(0)

    def _release(self, state: TaskState) -> None:
        """Publish SUSPENDED/COMPLETED; last touch by the releasing worker."""
        with self._state_lock:
            if self._state is not TaskState.RUNNING:
                raise TaskStateError(
                    f"task {self.task_id} released from state {self._state!r}"
                )
            self._state = state

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"<Continuation {self.task_id} {self.name or ''} {self._state.name}>"


def yield_now() -> Generator:
    """Suspend the current task and requeue it behind its worker's local work.

    Must be driven with ``yield from`` inside a task body.
    """
    from . import runtime  # cycle: runtime drives tasks, tasks ask about workers

    runtime.current_worker_or_raise("yield_now()")
    yield CMD_YIELD
