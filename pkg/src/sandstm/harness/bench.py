"""Benchmark matrix: every (workload, strategy, threads) cell, repeated under the CI rule."""

import bisect
import logging
import os
import random
import statistics
import threading
import time
from dataclasses import dataclass, field

from .._kernels import backend, warm_up
from .._types import Strategy
from ..core import STM, Counters
from ..errors import AbortReason
from .stats import interval, repeat_until_stable
from .workloads import WORKLOADS, CorrectnessFailure, drive, make_workload

log = logging.getLogger(__name__)

DEFAULT_THREADS = (1, 2, 4, 8)


@dataclass
class RunConfig:
    workloads: tuple = tuple(WORKLOADS)
    strategies: tuple = tuple(Strategy)
    threads: tuple = DEFAULT_THREADS
    confidence: float = 0.90
    ci_threshold: float = 0.05
    max_reps: int = 10
    seed: int = 0
    params: dict = field(default_factory=dict)  # workload name -> parameter overrides

    def __post_init__(self):
        self.strategies = tuple(Strategy.parse(s) for s in self.strategies)
        for w in self.workloads:
            if w not in WORKLOADS:
                raise ValueError(f"unknown workload {w!r}")
        if any(t < 1 for t in self.threads):
            raise ValueError("thread counts must be positive")
        if not 0 < self.confidence < 1:
            raise ValueError("confidence must lie in (0, 1)")
        if self.ci_threshold <= 0:
            raise ValueError("ci threshold must be positive")
        if self.max_reps < 2:
            raise ValueError("max_reps must be at least 2")


@dataclass
class CellResult:
    workload: str
    strategy: str
    threads: int
    mean_s: float
    ci_halfwidth_s: float
    reps: int
    stopped_by_rule: bool
    ops: int  # operations issued over all repetitions
    commits: int
    aborts: int
    full_validations: int
    comparisons: int
    leader_execs: int
    helper_execs: int
    helper_rounds: int
    dooms: int
    doom_latency_mean_s: float = None
    doom_latency_max_s: float = None
    abort_reasons: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)

    def consistent(self):
        """Counter invariants: one commit per operation, each execution commits or aborts."""
        return self.commits == self.ops and self.aborts + self.commits == self.leader_execs


@dataclass
class RunReport:
    cells: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def _doom_latencies(counters, commit_times):
    """Time from the first commit after an attempt's snapshot to its doom-driven abort."""
    clocks = [c for c, _ in commit_times]
    out = []
    for t, reason, _, _, snapshot in counters.abort_log:
        if reason not in (AbortReason.DOOMED, AbortReason.BEACON):
            continue
        k = bisect.bisect_right(clocks, snapshot)
        if k < len(commit_times) and commit_times[k][1] <= t:
            out.append(t - commit_times[k][1])
    return out


def run_once(workload, strategy, threads, seed):
    """One timed repetition with real threads; returns (seconds, Counters, latencies, ops)."""
    init = workload.initial()
    stm = STM(len(init), init=init, strategy=strategy)
    ops = workload.make_ops(threads, random.Random(seed))
    barrier = threading.Barrier(threads + 1)
    errors = []

    def spawn(fn, t):
        def main():
            barrier.wait()
            try:
                fn(t)
            except BaseException as e:  # surfaced after join
                errors.append(e)
        th = threading.Thread(target=main, name=f"worker{t}")
        th.start()
        return th

    try:
        results, handles = drive(stm, workload, ops, strategy, spawn)
        barrier.wait()
        t0 = time.perf_counter()
        for h in handles:
            h.join()
        elapsed = time.perf_counter() - t0
    finally:
        stm.close()
    if errors:
        raise errors[0]
    problems = workload.check(stm.heap.cells, ops, results)
    if problems:
        raise CorrectnessFailure(f"{workload.name} [{strategy.value}, {threads} threads]: "
                                 + "; ".join(problems[:5]))
    n_ops = sum(len(t) for t in ops)
    return elapsed, stm.stats, _doom_latencies(stm.stats, stm.commit_times), n_ops


def run_cell(workload, strategy, threads, config, seed):
    totals = Counters()
    latencies = []
    n_ops = 0
    rep = 0

    def sample():
        nonlocal n_ops, rep
        elapsed, stats, lat, ops = run_once(workload, strategy, threads, seed + rep)
        rep += 1
        totals.merge(stats)
        latencies.extend(lat)
        n_ops += ops
        return elapsed

    samples, by_rule = repeat_until_stable(sample, config.confidence, config.ci_threshold,
                                           config.max_reps)
    ci = interval(samples, config.confidence)
    return CellResult(
        workload=workload.name, strategy=strategy.value, threads=threads, mean_s=ci.mean,
        ci_halfwidth_s=ci.half_width, reps=len(samples), stopped_by_rule=by_rule, ops=n_ops,
        commits=totals.commits, aborts=totals.aborts, full_validations=totals.full_validations,
        comparisons=totals.validation_comparisons, leader_execs=totals.body_executions,
        helper_execs=totals.helper_executions, helper_rounds=totals.helper_rounds,
        dooms=totals.dooms,
        doom_latency_mean_s=statistics.fmean(latencies) if latencies else None,
        doom_latency_max_s=max(latencies) if latencies else None,
        abort_reasons={r.value: n for r, n in sorted(totals.abort_reasons.items(),
                                                      key=lambda kv: kv[0].value)},
        samples=samples)


def run_benchmark_matrix(config):
    """Time every cell of the matrix; a kernel end-state failure raises CorrectnessFailure."""
    cpus = os.cpu_count() or 1
    if max(config.threads) > cpus:
        log.warning("timing %d threads on %d logical cores: response times are not meaningful",
                    max(config.threads), cpus)
    warm_up()
    report = RunReport(metadata={
        "confidence": config.confidence, "ci_threshold": config.ci_threshold,
        "ci_method": "normal approximation", "max_reps": config.max_reps, "seed": config.seed,
        "kernel_backend": backend(), "logical_cores": cpus,
    })
    for w in config.workloads:
        workload = make_workload(w, **config.params.get(w, {}))
        for strategy in config.strategies:
            for threads in config.threads:
                cell = run_cell(workload, strategy, threads, config, config.seed)
                if not cell.consistent():
                    raise CorrectnessFailure(
                        f"{w} [{strategy.value}, {threads} threads]: {cell.commits} commits for "
                        f"{cell.ops} operations, {cell.aborts} aborts for "
                        f"{cell.leader_execs} executions")
                log.info("%s %s x%d: %.4fs +- %.4f (%d reps)", w, strategy.value, threads,
                         cell.mean_s, cell.ci_halfwidth_s, cell.reps)
                report.cells.append(cell)
    return report


__all__ = ["CellResult", "DEFAULT_THREADS", "RunConfig", "RunReport", "run_benchmark_matrix",
           "run_cell", "run_once"]
