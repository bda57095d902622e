"""Task-aware synchronization primitives under three unlock policies.

All primitives share the same shape: a test-and-set spinlock guards a small
state word plus an intrusive FIFO of waiting continuations (queue links live
inside the Continuation, so contended paths allocate nothing). The lock path
is identical everywhere; policies differ only in what unlock does with the
next waiter:

* ``inline``   -- resume the waiter nested on the current stack; the unlocker
                  does not suspend and returns only after the waiter stops.
* ``dispatch`` -- push the waiter onto the executor injector; the unlocker
                  keeps running on its worker.
* ``ces``      -- suspend the unlocker to the injector and resume the waiter
                  immediately on the current worker (combine-and-exchange).

While any waiter exists across an unlock, the state word stays LOCKED and
ownership passes to the queue head only; nothing can overtake it.

Operations are generator functions; drive them with ``yield from`` inside a
task body. They never block the OS thread beyond bounded spinning on the
guard.
"""

from __future__ import annotations

import itertools
import os
import threading
import time
from typing import Generator, List, Optional

from . import runtime
from .task import Continuation, UsageError

POLICIES = ("ces", "dispatch", "inline")

#: Contract checking (reentrancy, unlock-without-hold). Off by default: the
#: hot path carries no owner bookkeeping then, matching the release design.
DEBUG = bool(os.environ.get("CESCHED_DEBUG"))

_prim_ids = itertools.count(1)

_READER = 0
_WRITER = 1


class ContractViolation(RuntimeError):
    """A primitive was used outside its contract (detected in debug mode)."""


class SpinLock:
    """Test-and-set spinlock with bounded exponential backoff, spin-only.

    The test-and-set primitive is a non-blocking Lock.acquire; on failure we
    back off with a growing pause loop capped at a GIL-yielding sleep(0) so
    the holder can finish. Never parks in the OS.
    """

    __slots__ = ("_flag",)

    def __init__(self):
        self._flag = threading.Lock()

    def acquire(self) -> None:
        flag_acquire = self._flag.acquire
        if flag_acquire(False):
            return
        pause = 1
        while True:
            for _ in range(pause):
                pass
            if flag_acquire(False):
                return
            if pause < 64:
                pause <<= 1
            else:
                time.sleep(0)

    def release(self) -> None:
        self._flag.release()


def _policy_index(policy: str) -> int:
    try:
        return POLICIES.index(policy)
    except ValueError:
        raise UsageError(f"unknown policy {policy!r}; expected one of {POLICIES}") from None


class _WaiterQueue:
    """Intrusive FIFO of continuations; call only with the guard held."""

    __slots__ = ("head", "tail", "length")

    def __init__(self):
        self.head: Optional[Continuation] = None
        self.tail: Optional[Continuation] = None
        self.length = 0

    def push(self, c: Continuation, tag: int = 0, n: int = 0) -> None:
        c._wait_next = None
        c._wait_tag = tag
        c._wait_n = n
        c._wait_enq_ns = time.monotonic_ns()
        if self.tail is None:
            self.head = c
        else:
            self.tail._wait_next = c
        self.tail = c
        self.length += 1

    def pop(self) -> Optional[Continuation]:
        c = self.head
        if c is None:
            return None
        self.head = c._wait_next
        if self.head is None:
            self.tail = None
        c._wait_next = None
        self.length -= 1
        return c

    def __len__(self) -> int:
        return self.length

    def __bool__(self) -> bool:
        return self.head is not None


class Mutex:
    """Two-state task-aware mutex; FIFO admission; non-reentrant.

    The unlock policy is fixed per instance. Uncontended lock/unlock is a
    spinlock-guarded state write with no suspension under every policy.
    """

    __slots__ = ("prim_id", "policy", "_policy_ix", "_guard", "_locked", "_waiters", "_owner")

    def __init__(self, policy: str = "ces"):
        self.prim_id = next(_prim_ids)
        self.policy = policy
        self._policy_ix = _policy_index(policy)
        self._guard = SpinLock()
        self._locked = False
        self._waiters = _WaiterQueue()
        self._owner = -1  # maintained in debug mode only

    def locked(self) -> bool:
        return self._locked

    def waiter_count(self) -> int:
        return len(self._waiters)

    def lock(self) -> Generator:
        cur = runtime.current_worker_or_raise("Mutex.lock").current
        if DEBUG and self._owner == cur.task_id:
            raise ContractViolation(f"reentrant lock of mutex {self.prim_id}")
        self._guard.acquire()
        if not self._locked:
            self._locked = True
            self._guard.release()
            if DEBUG:
                self._owner = cur.task_id
            runtime.trace_event("enter", cur.task_id, self.prim_id)
            return
        self._waiters.push(cur)
        enq_ns = cur._wait_enq_ns
        self._guard.release()
        runtime.trace_event("enq", cur.task_id, self.prim_id, ts=enq_ns)
        yield from runtime.park()
        # handed the lock by an unlocker; state stayed LOCKED throughout
        if DEBUG:
            self._owner = cur.task_id
        runtime.trace_event("enter", cur.task_id, self.prim_id)

    def unlock(self) -> Generator:
        cur = runtime.current_worker_or_raise("Mutex.unlock").current
        if DEBUG:
            if self._owner != cur.task_id:
                raise ContractViolation(
                    f"unlock of mutex {self.prim_id} by non-owner task {cur.task_id}"
                )
            self._owner = -1
        runtime.trace_event("exit", cur.task_id, self.prim_id)
        self._guard.acquire()
        nxt = self._waiters.pop()
        if nxt is None:
            self._locked = False
            self._guard.release()
            return
        self._guard.release()
        ix = self._policy_ix
        if ix == 0:  # ces
            runtime.trace_event("handoff", nxt.task_id, self.prim_id)
            yield from runtime.switch_to(nxt)
        elif ix == 1:  # dispatch
            ts = time.monotonic_ns()
            runtime.schedule(nxt)
            runtime.trace_event("dispatch", nxt.task_id, self.prim_id, ts=ts)
        else:  # inline
            runtime.trace_event("handoff", nxt.task_id, self.prim_id)
            runtime.resume_inline(nxt)


class RwMutex:
    """Reader-writer mutex: writer-preferring FIFO with reader batching.

    Readers arriving while anything is queued (necessarily behind a writer)
    queue up too; a write unlock admits either the next writer or the whole
    run of readers at the queue head, resuming one of them without queuing
    delay and scheduling the rest.
    """

    __slots__ = ("prim_id", "policy", "_policy_ix", "_guard", "_readers",
                 "_writer", "_waiters", "_owner")

    def __init__(self, policy: str = "ces"):
        self.prim_id = next(_prim_ids)
        self.policy = policy
        self._policy_ix = _policy_index(policy)
        self._guard = SpinLock()
        self._readers = 0
        self._writer = False
        self._waiters = _WaiterQueue()
        self._owner = -1

    def lock_read(self) -> Generator:
        cur = runtime.current_worker_or_raise("RwMutex.lock_read").current
        self._guard.acquire()
        if not self._writer and not self._waiters:
            self._readers += 1
            self._guard.release()
            runtime.trace_event("enter", cur.task_id, self.prim_id)
            return
        self._waiters.push(cur, tag=_READER)
        enq_ns = cur._wait_enq_ns
        self._guard.release()
        runtime.trace_event("enq", cur.task_id, self.prim_id, ts=enq_ns)
        yield from runtime.park()
        # admitted by an unlocker, reader count already raised on our behalf
        runtime.trace_event("enter", cur.task_id, self.prim_id)

    def lock_write(self) -> Generator:
        cur = runtime.current_worker_or_raise("RwMutex.lock_write").current
        if DEBUG and self._owner == cur.task_id:
            raise ContractViolation(f"reentrant write lock of rw-mutex {self.prim_id}")
        self._guard.acquire()
        if not self._writer and self._readers == 0 and not self._waiters:
            self._writer = True
            self._guard.release()
            if DEBUG:
                self._owner = cur.task_id
            runtime.trace_event("enter", cur.task_id, self.prim_id)
            return
        self._waiters.push(cur, tag=_WRITER)
        enq_ns = cur._wait_enq_ns
        self._guard.release()
        runtime.trace_event("enq", cur.task_id, self.prim_id, ts=enq_ns)
        yield from runtime.park()
        if DEBUG:
            self._owner = cur.task_id
        runtime.trace_event("enter", cur.task_id, self.prim_id)

    def unlock_read(self) -> Generator:
        cur = runtime.current_worker_or_raise("RwMutex.unlock_read").current
        runtime.trace_event("exit", cur.task_id, self.prim_id)
        self._guard.acquire()
        if self._readers <= 0:
            self._guard.release()
            raise ContractViolation("read unlock without an active read lock")
        self._readers -= 1
        if self._readers > 0 or not self._waiters:
            self._guard.release()
            return  # other readers still inside, or nobody waiting
        nxt = self._waiters.pop()
        assert nxt._wait_tag == _WRITER, "queued reader while readers were active"
        self._writer = True
        self._guard.release()
        yield from self._hand_over([nxt])

    def unlock_write(self) -> Generator:
        cur = runtime.current_worker_or_raise("RwMutex.unlock_write").current
        if DEBUG:
            if self._owner != cur.task_id:
                raise ContractViolation(
                    f"write unlock of rw-mutex {self.prim_id} by task {cur.task_id}"
                )
            self._owner = -1
        runtime.trace_event("exit", cur.task_id, self.prim_id)
        self._guard.acquire()
        if not self._writer:
            self._guard.release()
            raise ContractViolation("write unlock without the write lock")
        self._writer = False
        if not self._waiters:
            self._guard.release()
            return
        head = self._waiters.pop()
        if head._wait_tag == _WRITER:
            self._writer = True
            self._guard.release()
            yield from self._hand_over([head])
            return
        batch = [head]
        while self._waiters and self._waiters.head._wait_tag == _READER:
            batch.append(self._waiters.pop())
        self._readers = len(batch)
        self._guard.release()
        yield from self._hand_over(batch)

    def _hand_over(self, admitted: List[Continuation]) -> Generator:
        ix = self._policy_ix
        if ix == 0:  # ces: first waiter dodges the ready queue, rest dispatched
            for c in admitted[1:]:
                ts = time.monotonic_ns()
                runtime.schedule(c)
                runtime.trace_event("dispatch", c.task_id, self.prim_id, ts=ts)
            runtime.trace_event("handoff", admitted[0].task_id, self.prim_id)
            yield from runtime.switch_to(admitted[0])
        elif ix == 1:  # dispatch
            for c in admitted:
                ts = time.monotonic_ns()
                runtime.schedule(c)
                runtime.trace_event("dispatch", c.task_id, self.prim_id, ts=ts)
        else:  # inline
            for c in admitted:
                runtime.trace_event("handoff", c.task_id, self.prim_id)
                runtime.resume_inline(c)


class Semaphore:
    """Counting semaphore with strict FIFO admission and batched release.

    ``release(n)`` admits as many head waiters as the new permit count
    satisfies; under ces one of them resumes on this worker immediately (the
    releaser suspends and is dispatched), the rest are scheduled.
    """

    __slots__ = ("prim_id", "policy", "_policy_ix", "_guard", "_permits", "_waiters")

    def __init__(self, permits: int = 1, policy: str = "ces"):
        if permits < 0:
            raise UsageError("initial permits must be >= 0")
        self.prim_id = next(_prim_ids)
        self.policy = policy
        self._policy_ix = _policy_index(policy)
        self._guard = SpinLock()
        self._permits = permits
        self._waiters = _WaiterQueue()

    @property
    def permits(self) -> int:
        return self._permits

    def acquire(self, n: int = 1) -> Generator:
        if n < 1:
            raise UsageError("acquire(n) requires n >= 1")
        cur = runtime.current_worker_or_raise("Semaphore.acquire").current
        self._guard.acquire()
        if self._permits >= n and not self._waiters:
            self._permits -= n
            self._guard.release()
            runtime.trace_event("enter", cur.task_id, self.prim_id)
            return
        self._waiters.push(cur, n=n)
        enq_ns = cur._wait_enq_ns
        self._guard.release()
        runtime.trace_event("enq", cur.task_id, self.prim_id, ts=enq_ns)
        yield from runtime.park()
        runtime.trace_event("enter", cur.task_id, self.prim_id)

    def release(self, n: int = 1) -> Generator:
        if n < 1:
            raise UsageError("release(n) requires n >= 1")
        cur = runtime.current_worker_or_raise("Semaphore.release").current
        runtime.trace_event("exit", cur.task_id, self.prim_id)
        self._guard.acquire()
        self._permits += n
        admitted: List[Continuation] = []
        while self._waiters and self._waiters.head._wait_n <= self._permits:
            head = self._waiters.pop()
            self._permits -= head._wait_n
            admitted.append(head)
        self._guard.release()
        if not admitted:
            return
        ix = self._policy_ix
        if ix == 0:
            for c in admitted[1:]:
                ts = time.monotonic_ns()
                runtime.schedule(c)
                runtime.trace_event("dispatch", c.task_id, self.prim_id, ts=ts)
            runtime.trace_event("handoff", admitted[0].task_id, self.prim_id)
            yield from runtime.switch_to(admitted[0])
        elif ix == 1:
            for c in admitted:
                ts = time.monotonic_ns()
                runtime.schedule(c)
                runtime.trace_event("dispatch", c.task_id, self.prim_id, ts=ts)
        else:
            for c in admitted:
                runtime.trace_event("handoff", c.task_id, self.prim_id)
                runtime.resume_inline(c)


class CondVar:
    """Condition variable bound to a Mutex.

    notify moves waiters without resuming them: while the mutex is locked a
    condition waiter becomes a mutex waiter directly (no resume/re-suspend
    churn); with the mutex unlocked the notified task takes ownership and
    control immediately, and the notifier suspends to the injector.
    """

    __slots__ = ("prim_id", "_mutex", "_guard", "_waiters")

    def __init__(self, mutex: Mutex):
        self.prim_id = next(_prim_ids)
        self._mutex = mutex
        self._guard = SpinLock()
        self._waiters = _WaiterQueue()

    @property
    def mutex(self) -> Mutex:
        return self._mutex

    def wait(self) -> Generator:
        """Enqueue on the condition, release the mutex, park; owns it again on return."""
        cur = runtime.current_worker_or_raise("CondVar.wait").current
        m = self._mutex
        if DEBUG:
            if m._owner != cur.task_id:
                raise ContractViolation("CondVar.wait without holding the mutex")
            m._owner = -1
        self._guard.acquire()
        self._waiters.push(cur)
        enq_ns = cur._wait_enq_ns
        self._guard.release()
        runtime.trace_event("enq", cur.task_id, self.prim_id, ts=enq_ns)
        # Release the mutex with the usual handoff, except the caller parks on
        # the condition instead of going to the injector: the next mutex owner
        # is staged in the direct-resume slot and runs right after we park.
        runtime.trace_event("exit", cur.task_id, m.prim_id)
        m._guard.acquire()
        nxt = m._waiters.pop()
        if nxt is None:
            m._locked = False
            m._guard.release()
        else:
            m._guard.release()
            runtime.trace_event("handoff", nxt.task_id, m.prim_id)
            runtime.stage_direct(nxt)
        yield from runtime.park()
        # notified and re-granted the mutex
        if DEBUG:
            m._owner = cur.task_id
        runtime.trace_event("enter", cur.task_id, self.prim_id)

    def notify_one(self) -> Generator:
        runtime.current_worker_or_raise("CondVar.notify_one")
        self._guard.acquire()
        w0 = self._waiters.pop()
        self._guard.release()
        if w0 is None:
            return
        yield from self._grant([w0])

    def notify_all(self) -> Generator:
        runtime.current_worker_or_raise("CondVar.notify_all")
        self._guard.acquire()
        woken: List[Continuation] = []
        while self._waiters:
            woken.append(self._waiters.pop())
        self._guard.release()
        if not woken:
            return
        yield from self._grant(woken)

    def _grant(self, woken: List[Continuation]) -> Generator:
        """Move woken waiters to the mutex; hand control to the first if it is free."""
        m = self._mutex
        m._guard.acquire()
        if m._locked:
            for c in woken:
                m._waiters.push(c)
                runtime.trace_event("enq", c.task_id, m.prim_id, ts=c._wait_enq_ns)
            m._guard.release()
            return  # notifier continues; nobody was resumed
        m._locked = True  # on behalf of woken[0]
        for c in woken[1:]:
            m._waiters.push(c)
            runtime.trace_event("enq", c.task_id, m.prim_id, ts=c._wait_enq_ns)
        m._guard.release()
        runtime.trace_event("handoff", woken[0].task_id, m.prim_id)
        yield from runtime.switch_to(woken[0])
