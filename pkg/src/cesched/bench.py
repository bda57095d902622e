"""Microbenchmark workloads comparing unlock scheduling policies.

The core workload is a loop per task: draw a prime, insert it into a shared
map inside the critical section, then do parallelizable work outside it.
Logical behavior is seeded per task, so the multiset of (task, resource,
prime) accesses is identical across policies; only scheduling differs.

Parallelizable work has two parts: a small trial-division factorization of
the drawn prime, plus an optional occupancy budget (``work_ns``) paid as
timed waits. The waits release the GIL while still occupying the worker, so
T workers genuinely overlap their parallel sections the way T cores would;
the budget is amortized against the host's measured sleep quantum, so the
average occupancy per iteration equals ``work_ns`` regardless of timer
resolution.
"""

from __future__ import annotations

import random
import statistics
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from . import metrics, runtime
from .metrics import AffinityTrace, DelayReport, build_affinity_trace
from .runtime import Executor, ExecutorConfig
from .sync import Mutex, RwMutex, Semaphore
from .task import UsageError

BENCHES = ("mutex", "rwlock", "semaphore", "affinity", "queuing-delay")
WRITER_PERCENTAGES = (50.0, 25.0, 12.5, 6.25)

BENCH_CSV_HEADER = [
    "bench", "policy", "threads", "tasks", "iters", "cs_ns", "writer_pct",
    "resources", "seed", "throughput_ops_s", "wall_ns",
]


def _sieve_first_primes(count: int, start: int) -> Tuple[int, ...]:
    primes: List[int] = []
    n = start
    while len(primes) < count:
        d = 3
        if n % 2:
            while d * d <= n and n % d:
                d += 2
            if d * d > n:
                primes.append(n)
        n += 1
    return tuple(primes)


#: 1000 fixed primes, drawn uniformly by the workloads. Kept small (>= 2^11)
#: so the factorization stays a few microseconds of bookkeeping; the bulk of
#: the parallel section is the work_ns occupancy budget.
PRIMES: Tuple[int, ...] = _sieve_first_primes(1000, 2053)


def factors(p: int) -> List[int]:
    """Prime factorization by trial division up to sqrt(p)."""
    out: List[int] = []
    n = p
    while n % 2 == 0:
        out.append(2)
        n //= 2
    d = 3
    while d * d <= n:
        while n % d == 0:
            out.append(d)
            n //= d
        d += 2
    if n > 1:
        out.append(n)
    return out


# -- occupancy ---------------------------------------------------------------

_monotonic_ns = time.monotonic_ns
_sleep = time.sleep

#: Measured once: actual duration of a minimal timed wait on this host.
_SLEEP_QUANTUM_NS: Optional[int] = None


def sleep_quantum_ns() -> int:
    """Median measured duration of the shortest useful timed wait."""
    global _SLEEP_QUANTUM_NS
    if _SLEEP_QUANTUM_NS is None:
        runtime._set_timer_slack_ns(1)
        ds = []
        for _ in range(15):
            t0 = _monotonic_ns()
            _sleep(50e-6)
            ds.append(_monotonic_ns() - t0)
        _SLEEP_QUANTUM_NS = int(statistics.median(ds))
    return _SLEEP_QUANTUM_NS


def busy_wait_ns(ns: int) -> None:
    """Occupy the worker and the CPU for ~ns wall time (holds the GIL)."""
    if ns <= 0:
        return
    end = _monotonic_ns() + ns
    while _monotonic_ns() < end:
        pass


def occupy_ns(ns: int, mode: str = "spin") -> None:
    """Occupy the worker for ~ns; sleep mode releases the GIL meanwhile."""
    if ns <= 0:
        return
    if mode == "spin":
        busy_wait_ns(ns)
        return
    end = _monotonic_ns() + ns
    while True:
        rem = end - _monotonic_ns()
        if rem <= 0:
            return
        _sleep(rem / 1e9)


def pay_work_debt(debt_ns: int) -> int:
    """Pay an occupancy debt with a timed wait once it covers a sleep quantum.

    Returns the remaining (possibly negative) debt; averaging over iterations
    converges on the configured budget per iteration.
    """
    if debt_ns >= sleep_quantum_ns():
        t0 = _monotonic_ns()
        _sleep(debt_ns / 1e9)
        debt_ns -= _monotonic_ns() - t0
    return debt_ns


# -- configuration and records -------------------------------------------------


@dataclass
class BenchConfig:
    """Parameters for one benchmark cell. Defaults follow the mutex workload
    shape: 5000 concurrent tasks of 1000 iterations each."""

    bench: str = "mutex"
    policy: str = "ces"
    threads: int = 8
    tasks: int = 5000
    iters: int = 1000
    cs_ns: int = 0
    cs_mode: str = "spin"
    writer_pct: float = 50.0
    resources: int = 4
    permits: int = 4
    work_ns: int = 0
    work_spin_ns: int = 0
    seed: int = 42
    tracing: bool = False
    # rwlock bench: per-kind CS occupancy overrides (None falls back to cs_ns)
    write_cs_ns: Optional[int] = None
    read_cs_ns: Optional[int] = None
    # executor idle-spin override (None keeps the executor default)
    spin_rounds: Optional[int] = None

    def __post_init__(self) -> None:
        if self.bench not in BENCHES:
            raise UsageError(f"unknown bench {self.bench!r}; expected one of {BENCHES}")
        if self.threads < 1 or self.tasks < 1 or self.iters < 1:
            raise UsageError("threads, tasks and iters must all be >= 1")
        if self.cs_mode not in ("spin", "sleep"):
            raise UsageError("cs_mode must be 'spin' or 'sleep'")
        if self.resources < 1:
            raise UsageError("resources must be >= 1")


@dataclass
class BenchRecord:
    """Result of one benchmark run; throughput is completed / wall seconds."""

    config: BenchConfig
    wall_ns: int = 0
    completed: int = 0
    throughput_ops_s: float = 0.0
    per_worker_completed: List[int] = field(default_factory=list)
    valid: bool = True
    error: Optional[str] = None

    def csv_row(self) -> List:
        c = self.config
        return [
            c.bench, c.policy, c.threads, c.tasks, c.iters, c.cs_ns,
            c.writer_pct if c.bench == "rwlock" else "",
            c.resources if c.bench == "affinity" else "",
            c.seed, f"{self.throughput_ops_s:.3f}", self.wall_ns,
        ]


def _task_rng(cfg: BenchConfig, ix: int) -> random.Random:
    return random.Random((cfg.seed << 24) ^ ix)


def expected_prime_draws(cfg: BenchConfig) -> Set[int]:
    """The set of primes the seeded tasks will insert (scheduling-independent)."""
    drawn: Set[int] = set()
    nprimes = len(PRIMES)
    for ix in range(cfg.tasks):
        rng = _task_rng(cfg, ix)
        for _ in range(cfg.iters):
            drawn.add(PRIMES[rng.randrange(nprimes)])
    return drawn


# -- workload bodies -----------------------------------------------------------


def _run_workload(cfg: BenchConfig, spawn_bodies: Callable[[Executor, List[int]], None],
                  tracing: bool = False) -> Tuple[BenchRecord, List]:
    ex_cfg = ExecutorConfig(threads=cfg.threads, seed=cfg.seed,
                            tracing=tracing or cfg.tracing)
    if cfg.spin_rounds is not None:
        ex_cfg.spin_rounds = cfg.spin_rounds
    ex = Executor(ex_cfg).start()
    counters = [0] * cfg.tasks
    t0 = _monotonic_ns()
    try:
        spawn_bodies(ex, counters)
        report = ex.run()
        wall = _monotonic_ns() - t0
        trace = ex.drain_trace()
    finally:
        ex.shutdown()
    completed = sum(counters)
    record = BenchRecord(
        config=cfg,
        wall_ns=wall,
        completed=completed,
        throughput_ops_s=completed / (wall / 1e9) if wall else 0.0,
        per_worker_completed=report.per_worker_completed,
    )
    if report.failed:
        record.valid = False
        record.error = f"{report.failed} task(s) failed"
    return record, trace


def mutex_workload(cfg: BenchConfig) -> BenchRecord:
    """Prime-insert loop under a mutex of the configured policy."""
    m = Mutex(policy=cfg.policy)
    table: Dict[int, int] = {}

    def body(ix: int, counters: List[int]):
        rng = _task_rng(cfg, ix)
        nprimes = len(PRIMES)
        cs_ns, cs_mode, work_ns = cfg.cs_ns, cfg.cs_mode, cfg.work_ns
        spin_ns = cfg.work_spin_ns
        debt = 0
        done = 0
        for _ in range(cfg.iters):
            p = PRIMES[rng.randrange(nprimes)]
            yield from m.lock()
            table[p] = p
            if cs_ns:
                occupy_ns(cs_ns, cs_mode)
            yield from m.unlock()
            factors(p)
            if spin_ns:
                busy_wait_ns(spin_ns)
            if work_ns:
                debt = pay_work_debt(debt + work_ns)
            done += 1
        counters[ix] = done

    def spawn(ex: Executor, counters: List[int]) -> None:
        for ix in range(cfg.tasks):
            ex.spawn(body(ix, counters))

    record, _ = _run_workload(cfg, spawn)
    _check_map_validity(cfg, table, record)
    return record


def _check_map_validity(cfg: BenchConfig, table: Dict[int, int], record: BenchRecord) -> None:
    if not record.valid:
        return
    expected = expected_prime_draws(cfg)
    if set(table) != expected or any(table[p] != p for p in table):
        record.valid = False
        record.error = (
            f"shared map corrupted: {len(table)} keys vs {len(expected)} expected"
        )


def rw_workload(cfg: BenchConfig) -> BenchRecord:
    """Mixed read/write prime-map accesses at the configured writer percentage."""
    rw = RwMutex(policy=cfg.policy)
    table: Dict[int, int] = {}
    wfrac = cfg.writer_pct / 100.0
    write_cs = cfg.cs_ns if cfg.write_cs_ns is None else cfg.write_cs_ns
    read_cs = cfg.cs_ns if cfg.read_cs_ns is None else cfg.read_cs_ns

    def body(ix: int, counters: List[int]):
        rng = _task_rng(cfg, ix)
        nprimes = len(PRIMES)
        cs_mode, work_ns = cfg.cs_mode, cfg.work_ns
        spin_ns = cfg.work_spin_ns
        debt = 0
        done = 0
        for _ in range(cfg.iters):
            p = PRIMES[rng.randrange(nprimes)]
            write = rng.random() < wfrac
            if write:
                yield from rw.lock_write()
                table[p] = p
                if write_cs:
                    occupy_ns(write_cs, cs_mode)
                yield from rw.unlock_write()
            else:
                yield from rw.lock_read()
                table.get(p)
                if read_cs:
                    occupy_ns(read_cs, cs_mode)
                yield from rw.unlock_read()
            factors(p)
            if spin_ns:
                busy_wait_ns(spin_ns)
            if work_ns:
                debt = pay_work_debt(debt + work_ns)
            done += 1
        counters[ix] = done

    def spawn(ex: Executor, counters: List[int]) -> None:
        for ix in range(cfg.tasks):
            ex.spawn(body(ix, counters))

    record, _ = _run_workload(cfg, spawn)
    if record.valid and not set(table) <= set(PRIMES):
        record.valid = False
        record.error = "shared map contains keys no task drew"
    return record


def semaphore_workload(cfg: BenchConfig) -> BenchRecord:
    """Prime-insert loop gated by a counting semaphore (cfg.permits wide)."""
    sem = Semaphore(permits=cfg.permits, policy=cfg.policy)
    table: Dict[int, int] = {}

    def body(ix: int, counters: List[int]):
        rng = _task_rng(cfg, ix)
        nprimes = len(PRIMES)
        work_ns = cfg.work_ns
        debt = 0
        done = 0
        for _ in range(cfg.iters):
            p = PRIMES[rng.randrange(nprimes)]
            yield from sem.acquire()
            table[p] = p
            if cfg.cs_ns:
                occupy_ns(cfg.cs_ns, cfg.cs_mode)
            yield from sem.release()
            factors(p)
            if cfg.work_spin_ns:
                busy_wait_ns(cfg.work_spin_ns)
            if work_ns:
                debt = pay_work_debt(debt + work_ns)
            done += 1
        counters[ix] = done

    def spawn(ex: Executor, counters: List[int]) -> None:
        for ix in range(cfg.tasks):
            ex.spawn(body(ix, counters))

    record, _ = _run_workload(cfg, spawn)
    _check_map_validity(cfg, table, record)
    return record


@dataclass
class AffinityResult:
    record: BenchRecord
    trace: AffinityTrace
    report: metrics.AffinityReport


def affinity_workload(cfg: BenchConfig) -> AffinityResult:
    """Each task repeatedly locks one of ``resources`` mutexes at random.

    Runs with tracing on; the result carries the per-resource execution
    sequences and the same-worker handoff report.
    """
    locks = [Mutex(policy=cfg.policy) for _ in range(cfg.resources)]
    counts = [0] * cfg.resources

    def body(ix: int, counters: List[int]):
        rng = _task_rng(cfg, ix)
        nres = cfg.resources
        work_ns = cfg.work_ns
        debt = 0
        done = 0
        for _ in range(cfg.iters):
            r = rng.randrange(nres)
            m = locks[r]
            yield from m.lock()
            counts[r] += 1
            if cfg.cs_ns:
                occupy_ns(cfg.cs_ns, cfg.cs_mode)
            yield from m.unlock()
            if work_ns:
                debt = pay_work_debt(debt + work_ns)
            done += 1
        counters[ix] = done

    def spawn(ex: Executor, counters: List[int]) -> None:
        for ix in range(cfg.tasks):
            ex.spawn(body(ix, counters))

    record, events = _run_workload(cfg, spawn, tracing=True)
    if record.valid and sum(counts) != cfg.tasks * cfg.iters:
        record.valid = False
        record.error = f"counter total {sum(counts)} != {cfg.tasks * cfg.iters}"
    return AffinityResult(
        record=record,
        trace=build_affinity_trace(events),
        report=metrics.validate_affinity(events),
    )


@dataclass
class DelayResult:
    record: BenchRecord
    report: DelayReport
    cs_stats: metrics.CsLengthStats


def queuing_delay_workload(cfg: BenchConfig) -> DelayResult:
    """Mutex workload with tracing, measuring schedule -> CS-entry intervals.

    Only meaningful for the dispatch policy: the other policies never place
    the next lock owner on the ready queue.
    """
    if cfg.policy != "dispatch":
        raise UsageError("the queuing-delay tracer requires the dispatch policy")
    m = Mutex(policy="dispatch")
    table: Dict[int, int] = {}

    def body(ix: int, counters: List[int]):
        rng = _task_rng(cfg, ix)
        nprimes = len(PRIMES)
        work_ns = cfg.work_ns
        debt = 0
        done = 0
        for _ in range(cfg.iters):
            p = PRIMES[rng.randrange(nprimes)]
            yield from m.lock()
            table[p] = p
            if cfg.cs_ns:
                occupy_ns(cfg.cs_ns, cfg.cs_mode)
            yield from m.unlock()
            factors(p)
            if cfg.work_spin_ns:
                busy_wait_ns(cfg.work_spin_ns)
            if work_ns:
                debt = pay_work_debt(debt + work_ns)
            done += 1
        counters[ix] = done

    def spawn(ex: Executor, counters: List[int]) -> None:
        for ix in range(cfg.tasks):
            ex.spawn(body(ix, counters))

    record, events = _run_workload(cfg, spawn, tracing=True)
    _check_map_validity(cfg, table, record)
    return DelayResult(
        record=record,
        report=metrics.measure_queuing_delay(events),
        cs_stats=metrics.cs_length_stats(events),
    )


_WORKLOADS: Dict[str, Callable[[BenchConfig], BenchRecord]] = {
    "mutex": mutex_workload,
    "rwlock": rw_workload,
    "semaphore": semaphore_workload,
}


def run_once(cfg: BenchConfig) -> BenchRecord:
    """Run the configured bench once, returning its record."""
    if cfg.bench == "affinity":
        return affinity_workload(cfg).record
    if cfg.bench == "queuing-delay":
        return queuing_delay_workload(cfg).record
    return _WORKLOADS[cfg.bench](cfg)


def run_repeated(cfg: BenchConfig, repeat: int = 5, warmup: int = 1,
                 run=run_once) -> Tuple[List[BenchRecord], BenchRecord]:
    """Warmup runs are discarded; returns (measured records, median record)."""
    if repeat < 1:
        raise UsageError("repeat must be >= 1")
    for _ in range(warmup):
        run(cfg)
    records = [run(cfg) for _ in range(repeat)]
    ranked = sorted(records, key=lambda r: r.throughput_ops_s)
    return records, ranked[len(ranked) // 2]


def sweep(base: BenchConfig, policies: Sequence[str], threads: Sequence[int],
          cs_ns: Sequence[int], repeat: int = 5) -> List[BenchRecord]:
    """Cross product of policy x threads x cs length, median-of-repeat each.

    A cell whose runs fail validity checks is reported as an invalid record
    rather than aborting the sweep.
    """
    out: List[BenchRecord] = []
    for policy in policies:
        for t in threads:
            for cs in cs_ns:
                cfg = replace(base, policy=policy, threads=t, cs_ns=cs)
                try:
                    _, median = run_repeated(cfg, repeat=repeat)
                except Exception as e:  # a broken cell must not sink the sweep
                    median = BenchRecord(config=cfg, valid=False, error=str(e))
                out.append(median)
    return out


def speedup(records: Sequence[BenchRecord], num_policy: str = "ces",
            den_policy: str = "dispatch") -> Dict[Tuple[int, int], Optional[float]]:
    """Per (threads, cs_ns) throughput ratio between two policies.

    Cells missing a valid numerator or denominator map to None.
    """
    by_key: Dict[Tuple[str, int, int], BenchRecord] = {}
    for r in records:
        by_key[(r.config.policy, r.config.threads, r.config.cs_ns)] = r
    out: Dict[Tuple[int, int], Optional[float]] = {}
    for (policy, t, cs), r in by_key.items():
        if policy != num_policy:
            continue
        den = by_key.get((den_policy, t, cs))
        if den is None or not den.valid or not r.valid or den.throughput_ops_s == 0:
            out[(t, cs)] = None
        else:
            out[(t, cs)] = r.throughput_ops_s / den.throughput_ops_s
    return out
