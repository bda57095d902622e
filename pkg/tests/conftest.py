import pytest

from cesched import Executor, ExecutorConfig, yield_now


def run_tasks(bodies, threads=2, seed=0, tracing=False, names=None, config=None):
    """Spawn the given generator bodies, run to completion, return (report, trace, handles)."""
    cfg = config or ExecutorConfig(threads=threads, seed=seed, tracing=tracing)
    ex = Executor(cfg).start()
    handles = []
    try:
        for i, b in enumerate(bodies):
            handles.append(ex.spawn(b, name=names[i] if names else ""))
        report = ex.run()
        trace = ex.drain_trace()
    finally:
        ex.shutdown()
    return report, trace, handles


def make_contended(mutex, nwaiters, entries, cs=None):
    """Bodies producing a guaranteed-contended FIFO scenario.

    A holder takes the lock and spins (yielding) until all waiters are
    enqueued in index order, then unlocks; each waiter records its index on
    entry. Deterministic regardless of scheduling noise.
    """
    def holder():
        yield from mutex.lock()
        while mutex.waiter_count() < nwaiters:
            yield from yield_now()
        yield from mutex.unlock()

    def waiter(i):
        while mutex.waiter_count() < i:
            yield from yield_now()
        yield from mutex.lock()
        entries.append(i)
        if cs is not None:
            cs()
        yield from mutex.unlock()

    return [holder()] + [waiter(i) for i in range(nwaiters)]


@pytest.fixture
def two_workers():
    ex = Executor(ExecutorConfig(threads=2, seed=1, tracing=True)).start()
    yield ex
    if not ex._stopped:
        ex.shutdown()
