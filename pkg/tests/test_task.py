"""Continuation state machine and spawn/outcome contracts."""

import threading

import pytest

from cesched import (
    Continuation,
    Executor,
    ExecutorConfig,
    ExecutorShutDown,
    TaskState,
    TaskStateError,
    UsageError,
    yield_now,
)
from conftest import run_tasks


def noop():
    if False:
        yield


def test_spawn_noop_completes():
    report, _, handles = run_tasks([noop()], threads=1)
    assert report.completed == 1
    assert report.failed == 0
    out = handles[0].outcome
    assert out is not None and not out.failed
    assert handles[0].join().task_id == out.task_id


def test_spawn_many_distinct_ids_all_complete():
    # the headline workload shape: 5000 concurrent task bodies
    n = 5000
    report, _, handles = run_tasks([noop() for _ in range(n)], threads=4)
    assert report.completed == n and report.pending == 0
    ids = {h.task_id for h in handles}
    assert len(ids) == n
    assert all(h.outcome is not None and not h.outcome.failed for h in handles)


def test_suspension_resumption_pairs_counted_by_trace():
    # one task that suspends exactly 3 times: trace must show 4 resumes, 3 suspends
    def body():
        for _ in range(3):
            yield from yield_now()

    _, trace, handles = run_tasks([body()], threads=1, tracing=True)
    tid = handles[0].task_id
    resumes = [e for e in trace if e[1] == "resume" and e[2] == tid]
    suspends = [e for e in trace if e[1] == "suspend" and e[2] == tid]
    assert len(suspends) == 3
    assert len(resumes) == 4  # initial + one per suspension


def test_linear_resume_discipline():
    # observed event sequence per task is (resume suspend)* resume complete
    def body(k):
        for _ in range(k):
            yield from yield_now()

    _, trace, handles = run_tasks([body(i % 4) for i in range(8)], threads=2, tracing=True)
    for h in handles:
        seq = [e[1] for e in trace if e[2] == h.task_id]
        assert seq[-1] == "complete"
        core = seq[:-1]
        assert core[0] == "resume" and core[-1] == "resume"
        for a, b in zip(core, core[1:]):
            assert (a, b) in (("resume", "suspend"), ("suspend", "resume"))


def test_migration_only_while_suspended():
    # worker id may change only across a suspend/resume boundary
    def body():
        for _ in range(20):
            yield from yield_now()

    _, trace, handles = run_tasks([body() for _ in range(6)], threads=4, tracing=True)
    for h in handles:
        events = [(e[1], e[3]) for e in trace if e[2] == h.task_id]
        last_worker = None
        for ev, wid in events:
            if ev == "resume":
                last_worker = wid
            else:
                # suspend/complete happen where the task was running
                assert wid == last_worker


def test_release_requires_running_state():
    c = Continuation(noop())
    with pytest.raises(TaskStateError):
        c._release(TaskState.SUSPENDED)


def test_resume_is_mutually_exclusive_per_continuation():
    # a racing resumer spins until the in-flight suspension lands, then wins
    c = Continuation(noop())
    c._claim_for_run()
    won = []

    def racer():
        c._claim_for_run()  # blocks (spins) while c is RUNNING
        won.append(True)

    t = threading.Thread(target=racer)
    t.start()
    t.join(timeout=0.2)
    assert not won  # still running: racer must not have claimed it
    c._release(TaskState.SUSPENDED)
    t.join(timeout=5)
    assert won == [True]
    assert c.state is TaskState.RUNNING


def test_resume_after_completed_is_error():
    report, _, handles = run_tasks([noop()], threads=1)
    c = handles[0]._cont
    with pytest.raises(TaskStateError):
        c._claim_for_run()


def test_body_must_be_generator():
    ex = Executor(ExecutorConfig(threads=1)).start()
    try:
        with pytest.raises(UsageError):
            ex.spawn(lambda: None)  # type: ignore[arg-type]
    finally:
        ex.shutdown()


def test_spawn_after_shutdown_rejected():
    ex = Executor(ExecutorConfig(threads=1)).start()
    ex.shutdown()
    with pytest.raises(ExecutorShutDown):
        ex.spawn(noop())


def test_outcome_emitted_exactly_once_per_task():
    n = 200
    report, _, handles = run_tasks([noop() for _ in range(n)], threads=4)
    outcomes = [h.outcome for h in handles]
    assert all(o is not None for o in outcomes)
    assert len({o.task_id for o in outcomes}) == n
    assert report.completed == n


def test_failing_body_records_error_outcome():
    def boom():
        yield from yield_now()
        raise ValueError("expected failure")

    report, _, handles = run_tasks([boom()], threads=1)
    assert report.failed == 1
    out = handles[0].outcome
    assert out.failed and isinstance(out.error, ValueError)


def test_yield_now_outside_task_is_usage_error():
    g = yield_now()
    with pytest.raises(UsageError):
        next(g)


def test_task_yields_1000_times_completes():
    def body():
        for _ in range(1000):
            yield from yield_now()

    report, _, _ = run_tasks([body()], threads=1)
    assert report.completed == 1 and report.failed == 0
