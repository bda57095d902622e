"""Measurement instruments over executor traces.

Works on the merged trace produced by ``Executor.drain_trace()``: tuples of
``(timestamp_ns, event, task_id, worker_id, primitive_id)``. Runtime events
(resume/suspend/complete) carry primitive_id -1; synchronization primitives
emit ``enq``, ``enter``, ``exit``, ``handoff`` and ``dispatch`` events, where
handoff/dispatch name the *target* task.

Per-worker buffers are appended without locks during the run and merged once
afterwards, so measuring does not perturb the queues being measured.
"""

from __future__ import annotations

import csv
import os
import statistics
import tempfile
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

from .runtime import TraceEvent


class MetricsError(RuntimeError):
    """The trace does not contain what this instrument needs."""


@dataclass(frozen=True)
class DelaySample:
    """Timing of one contended dispatch handoff.

    t_sync: unlock -> schedule interval (ns).
    t_queue: schedule -> critical-section entry interval (ns).
    delta_t_opt: exactly their sum; the span with nobody in the CS.
    """

    mutex_id: int
    task_id: int
    t_sync_ns: int
    t_queue_ns: int

    def __post_init__(self):
        if self.t_sync_ns < 0 or self.t_queue_ns < 0:
            raise MetricsError(
                f"negative delay sample: sync={self.t_sync_ns} queue={self.t_queue_ns}"
            )

    @property
    def delta_t_opt_ns(self) -> int:
        return self.t_sync_ns + self.t_queue_ns


@dataclass
class DelayReport:
    samples: List[DelaySample]
    median_t_queue_ns: float
    p95_t_queue_ns: float
    max_t_queue_ns: int
    median_t_sync_ns: float


@dataclass
class AffinityEntry:
    seq: int
    worker_id: int
    timestamp_ns: int
    contended: bool  # admitted through a handoff/dispatch (waiters existed)


@dataclass
class AffinityTrace:
    """Per-resource sequence of CS executions with contention flags."""

    per_resource: Dict[int, List[AffinityEntry]] = field(default_factory=dict)

    def total_entries(self) -> int:
        return sum(len(v) for v in self.per_resource.values())


@dataclass
class AffinityReport:
    per_resource_fraction: Dict[int, float]
    contended_handoffs: int
    same_worker_handoffs: int
    worker_changes_observed: bool

    @property
    def same_worker_fraction(self) -> float:
        if self.contended_handoffs == 0:
            return 1.0
        return self.same_worker_handoffs / self.contended_handoffs


@dataclass
class CsLengthStats:
    count: int
    median_ns: float
    p95_ns: float
    histogram: List[Tuple[int, int]]  # (bucket_floor_ns, count), power-of-two buckets


def _p95(xs: Sequence[float]) -> float:
    if not xs:
        return 0.0
    if len(xs) == 1:
        return float(xs[0])
    return statistics.quantiles(xs, n=20)[-1]


def measure_queuing_delay(events: Sequence[TraceEvent]) -> DelayReport:
    """One DelaySample per contended dispatch handoff in the trace.

    t_sync is measured from the unlocker's CS exit to its schedule() call,
    t_queue from the schedule() call to the target's CS entry.
    """
    dispatches = 0
    last_exit: Dict[int, int] = {}
    pending: Dict[Tuple[int, int], Tuple[int, int]] = {}  # (prim, task) -> (sched_ts, sync)
    samples: List[DelaySample] = []
    for ts, ev, task, worker, prim in events:
        if prim == -1:
            continue
        if ev == "exit":
            last_exit[prim] = ts
        elif ev == "dispatch":
            dispatches += 1
            sync = max(0, ts - last_exit.get(prim, ts))
            pending[(prim, task)] = (ts, sync)
        elif ev == "enter":
            hit = pending.pop((prim, task), None)
            if hit is not None:
                sched_ts, sync = hit
                samples.append(DelaySample(prim, task, sync, max(0, ts - sched_ts)))
    if dispatches == 0:
        raise MetricsError("trace contains no schedule (dispatch) events; "
                           "was the run executed with the dispatch policy and tracing on?")
    queues = [s.t_queue_ns for s in samples]
    syncs = [s.t_sync_ns for s in samples]
    return DelayReport(
        samples=samples,
        median_t_queue_ns=statistics.median(queues) if queues else 0.0,
        p95_t_queue_ns=_p95(queues),
        max_t_queue_ns=max(queues) if queues else 0,
        median_t_sync_ns=statistics.median(syncs) if syncs else 0.0,
    )


def measure_handoff_gaps(events: Sequence[TraceEvent]) -> List[int]:
    """Unlock -> next CS entry gaps (ns) for same-worker handoffs (ces/inline)."""
    pending: Dict[Tuple[int, int], int] = {}
    gaps: List[int] = []
    for ts, ev, task, worker, prim in events:
        if prim == -1:
            continue
        if ev == "handoff":
            pending[(prim, task)] = ts
        elif ev == "enter":
            t0 = pending.pop((prim, task), None)
            if t0 is not None:
                gaps.append(max(0, ts - t0))
    return gaps


def build_affinity_trace(events: Sequence[TraceEvent]) -> AffinityTrace:
    """Collect per-resource CS entry sequences with contention flags."""
    handed: Dict[Tuple[int, int], bool] = {}
    trace = AffinityTrace()
    seqs: Dict[int, int] = {}
    for ts, ev, task, worker, prim in events:
        if prim == -1:
            continue
        if ev in ("handoff", "dispatch"):
            handed[(prim, task)] = True
        elif ev == "enter":
            contended = handed.pop((prim, task), False)
            seq = seqs.get(prim, 0)
            seqs[prim] = seq + 1
            trace.per_resource.setdefault(prim, []).append(
                AffinityEntry(seq, worker, ts, contended)
            )
    return trace


def validate_affinity(events: Sequence[TraceEvent]) -> AffinityReport:
    """Fraction of contended handoffs whose next CS entry shares the worker.

    Also reports whether any consecutive CS entries on the same resource ran
    on different workers (expected under low contention).
    """
    per_resource_total: Dict[int, int] = {}
    per_resource_same: Dict[int, int] = {}
    pending: Dict[Tuple[int, int], int] = {}  # (prim, target task) -> handoff worker
    any_enter = False
    changes = False
    last_worker: Dict[int, int] = {}
    for ts, ev, task, worker, prim in events:
        if prim == -1:
            continue
        if ev == "handoff":
            pending[(prim, task)] = worker
        elif ev == "enter":
            any_enter = True
            if prim in last_worker and last_worker[prim] != worker:
                changes = True
            last_worker[prim] = worker
            src = pending.pop((prim, task), None)
            if src is not None:
                per_resource_total[prim] = per_resource_total.get(prim, 0) + 1
                if src == worker:
                    per_resource_same[prim] = per_resource_same.get(prim, 0) + 1
    if not any_enter:
        raise MetricsError("trace contains no critical-section entry events")
    fractions = {
        prim: per_resource_same.get(prim, 0) / total
        for prim, total in per_resource_total.items()
    }
    return AffinityReport(
        per_resource_fraction=fractions,
        contended_handoffs=sum(per_resource_total.values()),
        same_worker_handoffs=sum(per_resource_same.values()),
        worker_changes_observed=changes,
    )


def cs_length_stats(events: Sequence[TraceEvent]) -> CsLengthStats:
    """Histogram and quantiles of critical-section durations (enter -> exit)."""
    open_at: Dict[Tuple[int, int], int] = {}
    durations: List[int] = []
    for ts, ev, task, worker, prim in events:
        if prim == -1:
            continue
        key = (prim, task)
        if ev == "enter":
            if key in open_at:
                raise MetricsError(f"nested enter without exit for {key}")
            open_at[key] = ts
        elif ev == "exit":
            t0 = open_at.pop(key, None)
            if t0 is None:
                raise MetricsError(f"exit without matching enter for {key}")
            durations.append(ts - t0)
    if open_at:
        raise MetricsError(f"{len(open_at)} critical sections never exited")
    if not durations:
        raise MetricsError("trace contains no enter/exit pairs")
    buckets: Dict[int, int] = {}
    for d in durations:
        floor = 1
        while floor * 2 <= max(d, 1):
            floor *= 2
        buckets[floor] = buckets.get(floor, 0) + 1
    return CsLengthStats(
        count=len(durations),
        median_ns=statistics.median(durations),
        p95_ns=_p95(durations),
        histogram=sorted(buckets.items()),
    )


# -- CSV emission -------------------------------------------------------------

DELAY_CSV_HEADER = ["mutex_id", "task_id", "t_sync_ns", "t_queue_ns"]
AFFINITY_CSV_HEADER = ["resource_id", "seq", "worker_id", "contended"]


def atomic_write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write CSV via a temp file in the target directory plus rename."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(prefix=".csv-", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(header)
            wr.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_delay_csv(path: str, samples: Sequence[DelaySample]) -> None:
    atomic_write_csv(
        path,
        DELAY_CSV_HEADER,
        ((s.mutex_id, s.task_id, s.t_sync_ns, s.t_queue_ns) for s in samples),
    )


def write_affinity_csv(path: str, trace: AffinityTrace) -> None:
    rows = []
    for resource_id in sorted(trace.per_resource):
        for e in trace.per_resource[resource_id]:
            rows.append((resource_id, e.seq, e.worker_id, int(e.contended)))
    atomic_write_csv(path, AFFINITY_CSV_HEADER, rows)
