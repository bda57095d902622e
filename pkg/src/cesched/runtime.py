"""Multi-threaded work-stealing executor for cooperatively scheduled tasks.

Each worker owns a steal-visible local deque and a single-slot direct-resume
register. The slot is consumed before anything else on every loop iteration;
it is how an unlocking task hands its worker straight to the next critical
section without touching any shared queue. New and rescheduled continuations
go through a shared multi-producer injector.

Two scheduling verbs are exported for synchronization primitives:

* ``schedule(c)``   -- make ``c`` runnable on the executor (injector).
* ``switch_to(c)``  -- suspend the calling task to the injector and make ``c``
                       the very next continuation this worker runs.

plus ``resume_inline(c)``, which runs ``c`` nested on the current stack until
its next suspension and then returns to the caller, which never suspended.
"""

from __future__ import annotations

import collections
import ctypes
import random
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Generator, List, Optional, Tuple

from .task import (
    CMD_PARK,
    CMD_SWITCH,
    CMD_YIELD,
    Continuation,
    TaskOutcome,
    TaskState,
    TaskStateError,
    UsageError,
)

monotonic_ns = time.monotonic_ns

#: Trace event tuple: (timestamp_ns, event, task_id, worker_id, primitive_id).
TraceEvent = Tuple[int, str, int, int, int]

_PR_SET_TIMERSLACK = 29


def _set_timer_slack_ns(ns: int = 1) -> None:
    """Tighten this thread's kernel timer slack; harmless no-op elsewhere."""
    try:
        libc = ctypes.CDLL(None, use_errno=True)
        libc.prctl(_PR_SET_TIMERSLACK, ns, 0, 0, 0)
    except Exception:
        pass


class ExecutorShutDown(RuntimeError):
    """Work was submitted to an executor that is no longer running."""


@dataclass
class ExecutorConfig:
    """Executor tuning knobs.

    threads: worker count T >= 1.
    seed: seeds the per-worker steal-victim generators.
    steal: victim selection strategy; only "random-victim" is implemented.
    tracing: enable per-worker trace buffers (resume/suspend/complete plus
        whatever the sync primitives emit).
    stack_bytes: worker thread stack size. Inline scheduling nests resumes on
        the native stack, so convoys of depth d need roughly d * 4 KiB.
    switch_interval: process-wide GIL switch interval installed while the
        executor runs (None leaves it alone). The 5 ms default would dominate
        cross-thread handoff latencies.
    spin_rounds: polls an idle worker performs before parking on the idle
        condition variable.
    """

    threads: int = 1
    seed: int = 0
    steal: str = "random-victim"
    tracing: bool = False
    stack_bytes: int = 256 * 1024 * 1024
    switch_interval: Optional[float] = 0.0002
    spin_rounds: int = 64

    def __post_init__(self) -> None:
        if self.threads < 1:
            raise UsageError("thread count must be >= 1")
        if self.steal != "random-victim":
            raise UsageError(f"unknown steal strategy: {self.steal!r}")


@dataclass
class RunReport:
    """Summary returned by Executor.run()/shutdown()."""

    completed: int
    failed: int
    pending: int
    wall_ns: int
    per_worker_steps: List[int] = field(default_factory=list)
    per_worker_completed: List[int] = field(default_factory=list)


class _Worker:
    __slots__ = (
        "wid",
        "executor",
        "deque",
        "slot",
        "rng",
        "current",
        "switch_target",
        "trace",
        "steps",
        "completed",
        "thread",
    )

    def __init__(self, wid: int, executor: "Executor", seed: int):
        self.wid = wid
        self.executor = executor
        self.deque: collections.deque = collections.deque()
        self.slot: Optional[Continuation] = None
        self.rng = random.Random(seed)
        self.current: Optional[Continuation] = None
        self.switch_target: Optional[Continuation] = None
        self.trace: List[TraceEvent] = []
        self.steps = 0
        self.completed = 0
        self.thread: Optional[threading.Thread] = None


_tls = threading.local()


def current_worker() -> Optional[_Worker]:
    return getattr(_tls, "worker", None)


def current_worker_or_raise(what: str) -> _Worker:
    w = current_worker()
    if w is None or w.current is None:
        raise UsageError(f"{what} must be called from inside a running task")
    return w


def current_task() -> Optional[Continuation]:
    w = current_worker()
    return w.current if w is not None else None


def trace_event(ev: str, task_id: int, prim_id: int = -1, ts: Optional[int] = None) -> None:
    """Append a trace event to the current worker's buffer (tracing on only)."""
    w = getattr(_tls, "worker", None)
    if w is not None and w.executor._tracing:
        w.trace.append((ts if ts is not None else monotonic_ns(), ev, task_id, w.wid, prim_id))


def tracing_enabled() -> bool:
    w = getattr(_tls, "worker", None)
    return w is not None and w.executor._tracing


class Executor:
    """Fixed pool of workers driving continuations to completion.

    Lifecycle: ``start()`` -> ``spawn()``/... -> ``run()`` (blocks until all
    spawned tasks complete) -> ``shutdown()``. Also usable as a context
    manager, which starts on enter and shuts down on exit.
    """

    def __init__(self, config: Optional[ExecutorConfig] = None, **kwargs):
        if config is None:
            config = ExecutorConfig(**kwargs)
        elif kwargs:
            raise UsageError("pass either a config or keyword overrides, not both")
        self.config = config
        self._injector: collections.deque = collections.deque()
        self._workers = [
            _Worker(i, self, (config.seed * 0x9E3779B1 + i) & 0xFFFFFFFF)
            for i in range(config.threads)
        ]
        self._tracing = config.tracing
        self._lock = threading.Lock()
        self._idle = threading.Condition(self._lock)
        self._done = threading.Condition(self._lock)
        self._sleepers = 0
        self._outstanding = 0
        self._spawned = 0
        self._completed = 0
        self._failed = 0
        self._started = False
        self._stopping = False
        self._stopped = False
        self._ran = False
        self._started_at_ns = 0
        self._prev_switch_interval: Optional[float] = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "Executor":
        if self._started:
            raise UsageError("executor already started")
        self._started = True
        self._started_at_ns = monotonic_ns()
        if self.config.switch_interval is not None:
            self._prev_switch_interval = sys.getswitchinterval()
            sys.setswitchinterval(self.config.switch_interval)
        if sys.getrecursionlimit() < 200_000:
            # inline scheduling nests one resume per convoy member
            sys.setrecursionlimit(200_000)
        old_stack = threading.stack_size(self.config.stack_bytes)
        try:
            for w in self._workers:
                t = threading.Thread(
                    target=self._worker_main, args=(w,), name=f"cesched-w{w.wid}", daemon=True
                )
                w.thread = t
                t.start()
        finally:
            threading.stack_size(old_stack)
        return self

    def __enter__(self) -> "Executor":
        return self.start()

    def __exit__(self, *exc) -> None:
        if not self._stopped:
            self.shutdown()

    def run(self) -> RunReport:
        """Block until every spawned task has completed; returns a report.

        May be called once per executor.
        """
        if not self._started:
            raise UsageError("executor not started")
        if self._ran:
            raise UsageError("executor already ran; create a new one")
        self._ran = True
        with self._lock:
            while self._outstanding > 0:
                self._done.wait()
        return self._report()

    def shutdown(self) -> RunReport:
        """Stop workers (current steps finish), join threads, report pending."""
        with self._lock:
            self._stopping = True
            self._idle.notify_all()
        for w in self._workers:
            if w.thread is not None:
                w.thread.join()
        self._stopped = True
        if self._prev_switch_interval is not None:
            sys.setswitchinterval(self._prev_switch_interval)
            self._prev_switch_interval = None
        return self._report()

    def _report(self) -> RunReport:
        return RunReport(
            completed=self._completed,
            failed=self._failed,
            pending=self._outstanding,
            wall_ns=monotonic_ns() - self._started_at_ns,
            per_worker_steps=[w.steps for w in self._workers],
            per_worker_completed=[w.completed for w in self._workers],
        )

    # -- submission --------------------------------------------------------

    def spawn(self, body: Generator, name: str = "") -> "TaskHandle":
        """Wrap a generator task body and enqueue it on the injector."""
        if not self._started or self._stopping:
            raise ExecutorShutDown("spawn on an executor that is not running")
        c = Continuation(body, name=name)
        with self._lock:
            self._outstanding += 1
            self._spawned += 1
        self._push_injector(c)
        return TaskHandle(self, c)

    def schedule(self, c: Continuation) -> None:
        """Make a Created/Suspended continuation runnable via the injector.

        Deliberately never places ``c`` in the calling worker's direct-resume
        slot: scheduling means "any worker may take this".
        """
        if self._stopping:
            # task is dropped; record the loss exactly once
            self._finish(c, error=ExecutorShutDown("scheduled after shutdown"))
            return
        self._push_injector(c)

    def _push_injector(self, c: Continuation) -> None:
        self._injector.append(c)
        if self._sleepers:
            with self._lock:
                self._idle.notify()

    # -- worker loop -------------------------------------------------------

    def _worker_main(self, w: _Worker) -> None:
        _tls.worker = w
        _set_timer_slack_ns(1)
        injector = self._injector
        try:
            while not self._stopping:
                c = w.slot
                if c is not None:
                    w.slot = None
                else:
                    c = self._find_work(w, injector)
                if c is None:
                    self._idle_wait(w, injector)
                    continue
                self._step(w, c)
        finally:
            _tls.worker = None

    def _find_work(self, w: _Worker, injector) -> Optional[Continuation]:
        # Injector before the local deque: a task that yields goes to the back
        # of the local deque and must not overtake work that arrived earlier
        # through the injector.
        try:
            return injector.popleft()
        except IndexError:
            pass
        try:
            return w.deque.popleft()
        except IndexError:
            pass
        return self._steal(w)

    def _steal(self, w: _Worker) -> Optional[Continuation]:
        n = len(self._workers)
        if n == 1:
            return None
        start = w.rng.randrange(n)
        for i in range(n):
            v = self._workers[(start + i) % n]
            if v is w:
                continue
            try:
                return v.deque.popleft()  # oldest first: FIFO from the thief
            except IndexError:
                continue
        return None

    def _idle_wait(self, w: _Worker, injector) -> None:
        for _ in range(self.config.spin_rounds):
            if injector or self._stopping:
                return
            time.sleep(0)
            got = self._steal(w)
            if got is not None:
                w.deque.appendleft(got)
                return
        with self._lock:
            self._sleepers += 1
            try:
                if injector or self._stopping:
                    return
                self._idle.wait(timeout=0.05)
            finally:
                self._sleepers -= 1

    def _step(self, w: _Worker, c: Continuation) -> None:
        c._claim_for_run()
        w.current = c
        if self._tracing:
            w.trace.append((monotonic_ns(), "resume", c.task_id, w.wid, -1))
        fail: Optional[BaseException] = None
        cmd = None
        done = False
        try:
            cmd = c._gen.send(None)
        except StopIteration:
            done = True
        except BaseException as e:  # task bodies must not kill the worker
            done = True
            fail = e
        w.current = None
        w.steps += 1
        if done:
            self._finish(c, error=fail, worker=w)
            return
        self._apply_command(w, c, cmd)

    def _apply_command(self, w: _Worker, c: Continuation, cmd) -> None:
        if self._tracing:
            w.trace.append((monotonic_ns(), "suspend", c.task_id, w.wid, -1))
        if cmd is CMD_PARK:
            # Ownership was handed to a waiter queue before the task yielded;
            # publishing SUSPENDED is the last time this worker touches c.
            c._release(TaskState.SUSPENDED)
        elif cmd is CMD_YIELD:
            c._release(TaskState.SUSPENDED)
            w.deque.append(c)
        elif cmd is CMD_SWITCH:
            nxt = w.switch_target
            w.switch_target = None
            c._release(TaskState.SUSPENDED)
            self._push_injector(c)
            self._stage_slot(w, nxt)
        else:
            self._finish(
                c,
                error=UsageError(f"task yielded a non-command value: {cmd!r}"),
                worker=w,
            )

    @staticmethod
    def _stage_slot(w: _Worker, nxt: Continuation) -> None:
        if w.slot is not None:
            # Rare: a nested inline resume staged a switch target already.
            # Keep both runnable; the earlier claim moves to the deque front.
            w.deque.appendleft(w.slot)
        w.slot = nxt

    def _finish(self, c: Continuation, error: Optional[BaseException] = None,
                worker: Optional[_Worker] = None) -> None:
        if c.outcome is not None:
            raise TaskStateError(f"task {c.task_id} finished twice")
        now = monotonic_ns()
        try:
            c._release(TaskState.COMPLETED)
        except TaskStateError:
            # dropped before ever running (shutdown path)
            with c._state_lock:
                c._state = TaskState.COMPLETED
        c.outcome = TaskOutcome(c.task_id, now, failed=error is not None, error=error)
        if worker is not None:
            worker.completed += 1
            if self._tracing:
                worker.trace.append((now, "complete", c.task_id, worker.wid, -1))
        with self._lock:
            self._completed += 1
            if error is not None:
                self._failed += 1
            self._outstanding -= 1
            if self._outstanding <= 0:
                self._done.notify_all()

    # -- trace access ------------------------------------------------------

    def drain_trace(self) -> List[TraceEvent]:
        """Merge per-worker trace buffers into one time-ordered list."""
        merged: List[TraceEvent] = []
        for w in self._workers:
            merged.extend(w.trace)
            w.trace = []
        merged.sort(key=lambda e: e[0])
        return merged

    def dump_trace_csv(self, path: str) -> None:
        """Write runtime scheduling events as CSV (event,task_id,worker_id,timestamp_ns)."""
        import csv

        events = self.drain_trace()
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["event", "task_id", "worker_id", "timestamp_ns"])
            for ts, ev, tid, wid, prim in events:
                if prim == -1:
                    wr.writerow([ev, tid, wid, ts])


class TaskHandle:
    """Joinable handle returned by spawn(). Join only from non-worker threads."""

    __slots__ = ("_executor", "_cont")

    def __init__(self, executor: Executor, cont: Continuation):
        self._executor = executor
        self._cont = cont

    @property
    def task_id(self) -> int:
        return self._cont.task_id

    @property
    def outcome(self) -> Optional[TaskOutcome]:
        return self._cont.outcome

    def join(self, timeout: Optional[float] = None) -> TaskOutcome:
        if current_worker() is not None:
            raise UsageError("join() would block the worker; join from the driver thread")
        deadline = None if timeout is None else time.monotonic() + timeout
        ex = self._executor
        with ex._lock:
            while self._cont.outcome is None:
                remaining = None if deadline is None else deadline - time.monotonic()
                if remaining is not None and remaining <= 0:
                    raise TimeoutError(f"task {self.task_id} still pending")
                ex._done.wait(timeout=0.05 if remaining is None else min(remaining, 0.05))
        return self._cont.outcome


# -- scheduling verbs usable from inside task bodies -------------------------


def schedule(c: Continuation) -> None:
    """Enqueue ``c`` on the current executor's injector (never the slot)."""
    w = current_worker()
    if w is None:
        raise UsageError("schedule() outside a worker needs Executor.schedule")
    w.executor.schedule(c)


def switch_to(nxt: Continuation) -> Generator:
    """Suspend the caller to the injector; ``nxt`` runs next on this worker.

    Drive with ``yield from``. ``nxt`` must be suspended (or mid-suspension on
    another worker); the postcondition is that no other continuation runs on
    this worker in between.
    """
    w = current_worker_or_raise("switch_to()")
    cur = w.current
    if nxt is cur:
        raise TaskStateError("switch_to() cannot target the calling task")
    st = nxt.state
    if st is TaskState.COMPLETED or st is TaskState.CREATED:
        raise TaskStateError(f"switch_to target must be suspended, is {st.name}")
    w.switch_target = nxt
    yield CMD_SWITCH


def park() -> Generator:
    """Suspend without rescheduling; the resume responsibility lies elsewhere."""
    current_worker_or_raise("park()")
    yield CMD_PARK


def stage_direct(nxt: Continuation) -> None:
    """Stage ``nxt`` in this worker's direct-resume slot without suspending.

    Used by primitives that are about to park the current task but still owe
    an immediate resume to a successor (condition-variable wait handoff).
    """
    w = current_worker_or_raise("stage_direct()")
    Executor._stage_slot(w, nxt)


def resume_inline(nxt: Continuation) -> None:
    """Run ``nxt`` nested on this worker until it suspends or completes.

    Behaves like a call: control returns here afterwards and the caller never
    suspends. Nesting consumes native stack proportionally to the chain depth.
    """
    w = current_worker_or_raise("resume_inline()")
    ex = w.executor
    nxt._claim_for_run()
    prev = w.current
    w.current = nxt
    if ex._tracing:
        w.trace.append((monotonic_ns(), "resume", nxt.task_id, w.wid, -1))
    fail: Optional[BaseException] = None
    done = False
    cmd = None
    try:
        cmd = nxt._gen.send(None)
    except StopIteration:
        done = True
    except BaseException as e:
        done = True
        fail = e
    finally:
        w.current = prev
    w.steps += 1
    if done:
        ex._finish(nxt, error=fail, worker=w)
        return
    ex._apply_command(w, nxt, cmd)
