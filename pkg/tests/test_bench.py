"""Workload generators: validity, determinism, record bookkeeping, sweep."""

import math

import pytest

from cesched import bench
from cesched.bench import (
    BENCH_CSV_HEADER,
    PRIMES,
    BenchConfig,
    BenchRecord,
    affinity_workload,
    expected_prime_draws,
    factors,
    mutex_workload,
    queuing_delay_workload,
    run_repeated,
    rw_workload,
    semaphore_workload,
    speedup,
    sweep,
)
from cesched.task import UsageError


def _small(bench_name="mutex", **kw):
    base = dict(bench=bench_name, policy="ces", threads=2, tasks=8, iters=20, seed=13)
    base.update(kw)
    return BenchConfig(**base)


# -- fixed inputs ---------------------------------------------------------------


def test_primes_table_shape():
    assert len(PRIMES) == 1000
    assert len(set(PRIMES)) == 1000
    assert PRIMES[0] >= 2053
    assert list(PRIMES) == sorted(PRIMES)


def test_primes_are_prime_by_independent_check():
    for p in PRIMES[::97]:
        for d in range(2, int(math.isqrt(p)) + 1):
            assert p % d != 0, p


def test_factors_reconstructs_input():
    for n in [2, 12, 97, 2053, 4094, 9973]:
        fs = factors(n)
        prod = 1
        for f in fs:
            prod *= f
        assert prod == n


def test_factors_of_prime_is_itself():
    assert factors(PRIMES[17]) == [PRIMES[17]]


# -- workloads -------------------------------------------------------------------


@pytest.mark.parametrize("policy", ["ces", "dispatch", "inline"])
def test_mutex_workload_valid_single_thread(policy):
    r = mutex_workload(_small(policy=policy, threads=1))
    assert r.valid, r.error
    assert r.completed == 8 * 20
    assert r.throughput_ops_s > 0
    assert math.isclose(r.throughput_ops_s, r.completed / (r.wall_ns / 1e9), rel_tol=1e-9)


def test_workload_draws_deterministic_across_policies():
    a = expected_prime_draws(_small(policy="ces"))
    b = expected_prime_draws(_small(policy="inline"))
    assert a == b
    c = expected_prime_draws(_small(seed=14))
    assert a != c  # different seed, different multiset


def test_rw_workload_valid():
    r = rw_workload(_small("rwlock", writer_pct=50.0, threads=2))
    assert r.valid, r.error
    assert r.completed == 8 * 20


def test_semaphore_workload_valid():
    r = semaphore_workload(_small("semaphore", permits=2))
    assert r.valid, r.error


def test_affinity_workload_reports_trace():
    res = affinity_workload(_small("affinity", resources=2, tasks=12, iters=15))
    assert res.record.valid, res.record.error
    assert res.trace.total_entries() == 12 * 15
    assert set(res.trace.per_resource) <= {m for m in res.trace.per_resource}
    assert res.report.same_worker_fraction == 1.0


def test_queuing_delay_workload_requires_dispatch():
    with pytest.raises(UsageError):
        queuing_delay_workload(_small("queuing-delay", policy="ces"))


def test_queuing_delay_workload_produces_samples():
    # sleep-mode CS guarantees lock overlap at this tiny scale
    res = queuing_delay_workload(
        _small("queuing-delay", policy="dispatch", tasks=6, iters=20, threads=2,
               cs_ns=500_000, cs_mode="sleep"))
    assert res.record.valid
    assert res.report.samples
    assert res.cs_stats.count > 0


# -- repetition and sweep ---------------------------------------------------------


def test_run_repeated_median_selection():
    calls = []

    def fake_run(cfg):
        calls.append(1)
        return BenchRecord(config=cfg, wall_ns=1, completed=1,
                           throughput_ops_s=float(len(calls)))

    records, median = run_repeated(_small(), repeat=5, warmup=1, run=fake_run)
    assert len(calls) == 6  # one discarded warmup + five measured
    assert len(records) == 5
    assert median.throughput_ops_s == 4.0  # median of 2,3,4,5,6


def test_sweep_cell_count():
    cfg = _small(tasks=4, iters=5, threads=1)
    records = sweep(cfg, policies=["ces", "dispatch", "inline"],
                    threads=[1, 2], cs_ns=[0, 250], repeat=1)
    assert len(records) == 3 * 2 * 2
    assert all(r.valid for r in records)


def test_sweep_marks_invalid_cells_without_aborting(monkeypatch):
    cfg = _small(tasks=2, iters=2, threads=1)

    real = bench.mutex_workload

    def flaky(c):
        if c.policy == "dispatch":
            raise RuntimeError("injected fault")
        return real(c)

    monkeypatch.setitem(bench._WORKLOADS, "mutex", flaky)
    records = sweep(cfg, policies=["ces", "dispatch"], threads=[1], cs_ns=[0], repeat=1)
    by_policy = {r.config.policy: r for r in records}
    assert by_policy["ces"].valid
    assert not by_policy["dispatch"].valid
    assert "injected fault" in by_policy["dispatch"].error


def test_speedup_table():
    def rec(policy, threads, cs, thr, valid=True):
        return BenchRecord(config=BenchConfig(bench="mutex", policy=policy,
                                              threads=threads, tasks=1, iters=1, cs_ns=cs),
                           throughput_ops_s=thr, valid=valid)

    records = [rec("ces", 2, 0, 300.0), rec("dispatch", 2, 0, 100.0),
               rec("ces", 4, 0, 100.0), rec("dispatch", 4, 0, 0.0, valid=False)]
    table = speedup(records)
    assert table[(2, 0)] == 3.0
    assert table[(4, 0)] is None


def test_bench_record_csv_row_matches_header():
    r = mutex_workload(_small(threads=1, tasks=2, iters=2))
    row = r.csv_row()
    assert len(row) == len(BENCH_CSV_HEADER)
    assert row[0] == "mutex" and row[1] == "ces"


def test_config_validation():
    with pytest.raises(UsageError):
        BenchConfig(bench="nope")
    with pytest.raises(UsageError):
        BenchConfig(threads=0)
    with pytest.raises(UsageError):
        BenchConfig(cs_mode="busy")
