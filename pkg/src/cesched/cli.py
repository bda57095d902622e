"""Benchmark command line: pick a bench and a policy, run, emit CSV.

Exit codes: 0 on success, 1 when the benchmark fails its validity checks or
output cannot be written, 2 on usage errors. ``CESCHED_THREADS`` and
``CESCHED_SEED`` provide environment defaults for automation; explicit flags
win.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from typing import List, Optional, Sequence

from . import bench, metrics
from .bench import BENCHES, BenchConfig
from .sync import POLICIES

CSV_SCHEMA_VERSION = 1  # header: bench.BENCH_CSV_HEADER


@dataclass
class CliInvocation:
    config: BenchConfig
    out_path: str
    repeat: int
    verbose: bool
    list_mode: bool


def _env_int(name: str) -> Optional[int]:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cesched-bench",
        description="Scheduling-policy microbenchmarks for task-aware locks.",
    )
    p.add_argument("--bench", choices=BENCHES, help="benchmark to run")
    p.add_argument("--policy", choices=POLICIES, default="ces",
                   help="unlock scheduling policy (default: ces)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker count (default: 8 or $CESCHED_THREADS)")
    p.add_argument("--tasks", type=int, default=5000, help="concurrent tasks (default: 5000)")
    p.add_argument("--iters", type=int, default=1000, help="iterations per task (default: 1000)")
    p.add_argument("--cs-ns", type=int, default=0, help="critical-section occupancy in ns")
    p.add_argument("--cs-mode", choices=("spin", "sleep"), default="spin",
                   help="how the CS occupies its worker (default: spin)")
    p.add_argument("--writer-pct", type=float, default=None,
                   help="rwlock bench writer percentage (50, 25, 12.5 or 6.25)")
    p.add_argument("--resources", type=int, default=None,
                   help="affinity bench resource count (default: 4)")
    p.add_argument("--permits", type=int, default=None,
                   help="semaphore bench permit count (default: 4)")
    p.add_argument("--work-ns", type=int, default=0,
                   help="parallel-section occupancy budget per iteration in ns "
                        "(paid as GIL-releasing timed waits)")
    p.add_argument("--work-spin-ns", type=int, default=0,
                   help="parallel-section CPU spin per iteration in ns")
    p.add_argument("--seed", type=int, default=None,
                   help="workload seed (default: 42 or $CESCHED_SEED)")
    p.add_argument("--out", default="bench.csv", help="output CSV path (default: bench.csv)")
    p.add_argument("--repeat", type=int, default=5,
                   help="measured runs; the median row is reported (default: 5)")
    p.add_argument("--list", action="store_true", dest="list_mode",
                   help="list benches and policies, then exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_args(argv: Sequence[str]) -> CliInvocation:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.list_mode:
        return CliInvocation(BenchConfig(), ns.out, ns.repeat, ns.verbose, True)
    if ns.bench is None:
        parser.error("--bench is required (or use --list)")
    if ns.threads is None:
        ns.threads = _env_int("CESCHED_THREADS") or 8
    if ns.seed is None:
        env_seed = _env_int("CESCHED_SEED")
        ns.seed = 42 if env_seed is None else env_seed
    if ns.threads < 1:
        parser.error("--threads must be >= 1")
    if ns.repeat < 1:
        parser.error("--repeat must be >= 1")
    if ns.writer_pct is not None:
        if ns.bench != "rwlock":
            parser.error("--writer-pct only applies to --bench rwlock")
        if ns.writer_pct not in bench.WRITER_PERCENTAGES:
            parser.error(f"--writer-pct must be one of {bench.WRITER_PERCENTAGES}")
    if ns.resources is not None and ns.bench != "affinity":
        parser.error("--resources only applies to --bench affinity")
    if ns.permits is not None and ns.bench != "semaphore":
        parser.error("--permits only applies to --bench semaphore")
    if ns.bench == "queuing-delay" and ns.policy != "dispatch":
        parser.error("the queuing-delay tracer requires --policy dispatch")
    cfg = BenchConfig(
        bench=ns.bench,
        policy=ns.policy,
        threads=ns.threads,
        tasks=ns.tasks,
        iters=ns.iters,
        cs_ns=ns.cs_ns,
        cs_mode=ns.cs_mode,
        writer_pct=ns.writer_pct if ns.writer_pct is not None else 50.0,
        resources=ns.resources if ns.resources is not None else 4,
        permits=ns.permits if ns.permits is not None else 4,
        work_ns=ns.work_ns,
        work_spin_ns=ns.work_spin_ns,
        seed=ns.seed,
    )
    return CliInvocation(cfg, ns.out, ns.repeat, ns.verbose, False)


def _sibling(path: str, name: str) -> str:
    return os.path.join(os.path.dirname(os.path.abspath(path)), name)


def run_and_report(inv: CliInvocation) -> int:
    if inv.list_mode:
        print("benches: " + " ".join(BENCHES))
        print("policies: " + " ".join(POLICIES))
        return 0
    cfg = inv.config
    extra_files: List[str] = []
    try:
        if cfg.bench == "affinity":
            results = [bench.affinity_workload(cfg) for _ in range(inv.repeat + 1)][1:]
            records = [r.record for r in results]
            median = sorted(results, key=lambda r: r.record.throughput_ops_s)[len(results) // 2]
            metrics.write_affinity_csv(_sibling(inv.out_path, "affinity.csv"), median.trace)
            extra_files.append(_sibling(inv.out_path, "affinity.csv"))
            summary = (
                f"same-worker fraction over contended handoffs: "
                f"{median.report.same_worker_fraction:.3f} "
                f"({median.report.contended_handoffs} handoffs), "
                f"worker changes observed: {median.report.worker_changes_observed}"
            )
            median_record = median.record
        elif cfg.bench == "queuing-delay":
            results = [bench.queuing_delay_workload(cfg) for _ in range(inv.repeat + 1)][1:]
            records = [r.record for r in results]
            mres = sorted(results, key=lambda r: r.record.throughput_ops_s)[len(results) // 2]
            metrics.write_delay_csv(_sibling(inv.out_path, "delay.csv"), mres.report.samples)
            extra_files.append(_sibling(inv.out_path, "delay.csv"))
            summary = (
                f"median t_queue {mres.report.median_t_queue_ns / 1e3:.1f} us, "
                f"p95 {mres.report.p95_t_queue_ns / 1e3:.1f} us, "
                f"max {mres.report.max_t_queue_ns / 1e3:.1f} us, "
                f"median CS {mres.cs_stats.median_ns / 1e3:.2f} us"
            )
            median_record = mres.record
        else:
            records, median_record = bench.run_repeated(cfg, repeat=inv.repeat, warmup=1)
            thr = [r.throughput_ops_s for r in records]
            summary = (
                f"median throughput {median_record.throughput_ops_s:,.0f} ops/s "
                f"(spread {min(thr):,.0f}..{max(thr):,.0f} over {len(thr)} runs)"
            )
    except Exception as e:
        print(f"error: benchmark failed: {e}", file=sys.stderr)
        return 1

    try:
        metrics.atomic_write_csv(inv.out_path, bench.BENCH_CSV_HEADER,
                                 [median_record.csv_row()])
    except OSError as e:
        print(f"error: cannot write {inv.out_path}: {e}", file=sys.stderr)
        return 1

    print(f"{cfg.bench} / {cfg.policy}: threads={cfg.threads} tasks={cfg.tasks} "
          f"iters={cfg.iters} cs={cfg.cs_ns}ns seed={cfg.seed}")
    print(summary)
    if inv.verbose:
        for i, r in enumerate(records):
            print(f"  run {i}: {r.throughput_ops_s:,.0f} ops/s wall={r.wall_ns / 1e6:.1f} ms "
                  f"valid={r.valid}")
    print(f"wrote {inv.out_path}" + (f" and {', '.join(extra_files)}" if extra_files else ""))
    invalid = [r for r in records if not r.valid]
    if invalid:
        print(f"error: {len(invalid)}/{len(records)} runs failed validity checks: "
              f"{invalid[0].error}", file=sys.stderr)
        return 1
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    inv = parse_args(sys.argv[1:] if argv is None else list(argv))
    return run_and_report(inv)


if __name__ == "__main__":
    sys.exit(main())
