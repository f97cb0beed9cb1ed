"""The ten acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict; the lines are printed in the pytest
terminal summary, or directly when this file is run as a script.
"""

import math
import random
import statistics
import time

import pytest

from sandstm import (STM, AbortReason, DeterministicScheduler, FirstChooser, RandomChooser,
                     Strategy)
from sandstm.harness.hazards import explore_hazard, run_hazard_scenario
from sandstm.harness.stats import MIN_REPS, stop_index
from sandstm.harness.workloads import WORKLOADS, self_check
from sandstm.oracle import (check_permutations, check_serializable, random_history,
                            random_program, run_program_body)

from conftest import ACCEPTANCE

LAZY = (Strategy.LAZY_TIMER, Strategy.LAZY_HELPER_READSET, Strategy.LAZY_HELPER_CLONE)


def record(k, ok, detail):
    ACCEPTANCE[k] = (ok, detail)
    print(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# -- 1: randomized histories ----------------------------------------------------------

HISTORIES = 10_000


def test_c01_random_histories_serializable():
    t0 = time.perf_counter()
    violations = 0
    per = {}
    for strategy in Strategy:
        commits = aborts = cross = 0
        for seed in range(HISTORIES):
            history, stats = random_history(seed, strategy)
            commits += len(history.commits)
            aborts += stats.aborts
            if not check_serializable(history).ok:
                violations += 1
            if len(history.commits) <= 6:
                cross += 1
                if not check_permutations(history).ok:
                    violations += 1
        per[strategy.value] = (commits, aborts, cross)
    elapsed = time.perf_counter() - t0
    detail = (f"{HISTORIES} histories x {len(per)} strategies, {violations} violations, "
              f"{elapsed:.0f}s; (commits, aborts, permutation-checked) {per}")
    record(1, violations == 0 and elapsed <= 300 and all(a > 0 for _, a, _ in per.values()),
           detail)


# -- 2: exhaustive hazard exploration --------------------------------------------------

def test_c02_exhaustive_hazard_containment():
    t0 = time.perf_counter()
    rows = []
    ok = True
    for name in ("privatization-fault", "doomed-loop", "stray-stack-write"):
        for strategy in LAZY:
            r = explore_hazard(name, strategy, max_yield_points=20)
            rows.append(f"{name}/{strategy.value}: {r.schedules} schedules, "
                        f"{r.hazardous} hazardous, {len(r.problems)} problems")
            ok &= r.contained and r.hazardous > 0 and r.max_yield_points <= 20
    elapsed = time.perf_counter() - t0
    record(2, ok and elapsed <= 120, f"{elapsed:.1f}s; " + "; ".join(rows))


# -- 3: validation-count laws ---------------------------------------------------------

def _forced_commit_run(strategy, n=32, **cfg):
    """Read cells 0..n-1, with another thread committing to cell n before every read."""
    sched = DeterministicScheduler(FirstChooser())
    stm = STM(n + 1, hooks=sched, record=True, **cfg)
    state = {"asked": 0, "done": 0, "stats": None}

    def reader_body(tx):
        total = 0
        for i in range(n):
            if not tx.is_clone:
                state["asked"] = i + 1
                sched.wait_until(lambda: state["done"] > i)
            total += tx.read(i)
        return total

    def reader():
        from sandstm import Counters
        c = Counters()
        stm.run(reader_body, strategy=strategy, counters=c)
        state["stats"] = c

    def writer():
        for i in range(n):
            sched.wait_until(lambda: state["asked"] > i)
            stm.run(lambda tx: tx.write(n, i + 1), strategy=Strategy.EAGER)
            state["done"] = i + 1

    sched.spawn(reader, name="reader")
    sched.spawn(writer, name="writer")
    try:
        sched.run()
    finally:
        stm.close()
    return state["stats"], stm


def test_c03_validation_count_laws():
    n = 32
    eager, stm = _forced_commit_run(Strategy.EAGER, n)
    want = n * (n + 1) // 2
    got = {"eager": eager.validation_comparisons}
    ok = eager.validation_comparisons == want and eager.aborts == 0 and stm.seqlock.value == 2 * n
    for strategy in LAZY:
        c, _ = _forced_commit_run(strategy, n, beacon_enabled=False)
        got[strategy.value] = c.validation_comparisons
        ok &= c.validation_comparisons == n and c.full_validations == 1 and c.aborts == 0
    record(3, ok, f"n={n}: eager {got['eager']} (want {want}), lazy "
                  + ", ".join(f"{k} {v}" for k, v in got.items() if k != "eager") + f" (want {n})")


# -- 4: immediate-abort paths ---------------------------------------------------------

def test_c04_immediate_aborts_skip_validation():
    cases = {"stray-stack-write": AbortReason.GUARD, "clone-miss": AbortReason.CLONE_MISS,
             "privatization-fault": AbortReason.STALE_FAULT}
    rows = []
    ok = True
    for name, reason in cases.items():
        for strategy in LAZY:
            for seed in range(10):
                o = run_hazard_scenario(name, strategy, seed=seed)
                good = o.contained and o.mechanism is reason and o.validations_on_path == 0
                ok &= good
            rows.append(f"{name}/{strategy.value} -> {o.mechanism.value}, "
                        f"delta={o.validations_on_path}")
    record(4, ok, "; ".join(rows))


# -- 5: doomed-loop latency -----------------------------------------------------------

def test_c05_doomed_loop_latency():
    lat = []
    ok_timer = 0
    for seed in range(1000):
        o = run_hazard_scenario("doomed-loop", Strategy.LAZY_TIMER, seed=seed)
        if o.contained and o.mechanism is AbortReason.BEACON and o.doom_latency <= 0.020 + 1e-9:
            ok_timer += 1
        lat.append(o.doom_latency)
    helper_rounds = {}
    ok_helper = True
    for strategy in (Strategy.LAZY_HELPER_READSET, Strategy.LAZY_HELPER_CLONE):
        worst = 0
        for seed in range(100):
            o = run_hazard_scenario("doomed-loop", strategy, seed=seed)
            good = (o.contained and o.mechanism is AbortReason.DOOMED
                    and o.doom_latency_rounds is not None and o.doom_latency_rounds <= 1)
            ok_helper &= good
            worst = max(worst, o.doom_latency_rounds if o.doom_latency_rounds is not None else 99)
        helper_rounds[strategy.value] = worst
    record(5, ok_timer == 1000 and ok_helper,
           f"timer@100Hz {ok_timer}/1000 within 20ms (max {max(lat) * 1e3:.1f}ms virtual); "
           f"worst helper rounds {helper_rounds}")


# -- 6: single-threaded clone overhead ------------------------------------------------

def _single_thread_executions(strategy, txs=50):
    sched = DeterministicScheduler(FirstChooser())
    stm = STM(8, hooks=sched)
    rng = random.Random(6)
    _, threads = random_program(rng, max_threads=1, max_txs=txs)
    bodies = [ops for ops in threads[0]]

    def worker():
        for ops in bodies:
            stm.run(run_program_body, ops, strategy=strategy)

    sched.spawn(worker, name="solo")
    try:
        sched.run()
    finally:
        stm.close()
    return stm.stats


def test_c06_clone_body_executions():
    per = {}
    ok = True
    for strategy in Strategy:
        st = _single_thread_executions(strategy)
        total = st.body_executions + st.helper_executions
        per[strategy.value] = total / st.commits
        if strategy is Strategy.LAZY_HELPER_CLONE:
            ok &= st.body_executions == st.commits and st.helper_executions >= st.commits
        elif strategy in (Strategy.EAGER, Strategy.LAZY_TIMER):
            ok &= total == st.commits and st.helper_executions == 0
    record(6, ok, "body executions per commit: "
                  + ", ".join(f"{k} {v:.2f}" for k, v in per.items()))


# -- 7: CI stopping rule --------------------------------------------------------------

def _z_by_bisection(confidence):
    """Two-sided normal quantile from math.erf by bisection (independent of statistics)."""
    target = confidence
    lo, hi = 0.0, 10.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if math.erf(mid / math.sqrt(2)) < target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def closed_form_stop(confidence, threshold):
    # z s / sqrt(n) < threshold s  <=>  n > (z / threshold)^2
    return max(MIN_REPS, math.floor((_z_by_bisection(confidence) / threshold) ** 2) + 1)


CI_PARAMS = [(0.90, 0.05), (0.90, 0.10), (0.95, 0.10), (0.80, 0.20), (0.99, 0.25),
             (0.95, 0.30), (0.90, 0.50), (0.80, 0.08), (0.99, 0.10), (0.95, 0.06)]


def test_c07_ci_stop_index():
    rows = []
    ok = True
    for k, (conf, thr) in enumerate(CI_PARAMS):
        rng = random.Random(k)
        got = stop_index((rng.gauss(10.0, 1.0 + k) for _ in range(10 ** 5)), conf, thr)
        want = closed_form_stop(conf, thr)
        ok &= got == want
        rows.append(f"({conf},{thr})->{got}/{want}")
    zero = stop_index(iter([3.5] * 100), 0.90, 0.05)
    ok &= zero == MIN_REPS
    record(7, ok, f"{' '.join(rows)}; sigma=0 stops at {zero}")


# -- 8: allocation budget guard -------------------------------------------------------

def test_c08_budget_guard():
    ok = True
    counts = {}
    for strategy in LAZY:
        good = 0
        for seed in range(100):
            o = run_hazard_scenario("over-allocation", strategy, seed=seed)
            if o.contained and o.mechanism is AbortReason.BUDGET:
                good += 1
        counts[strategy.value] = good
        ok &= good == 100
    record(8, ok, "doomed over-budget aborted before grant, valid grant after exactly 1 "
                  f"validation, no leak: {counts} of 100")


# -- 9: helper-clone equivalence ------------------------------------------------------

def _clone_equivalence_trial(seed):
    sched = DeterministicScheduler(RandomChooser(seed))
    rng = random.Random(seed)
    cells, threads = random_program(rng, max_threads=1, max_txs=1)
    ops = threads[0][0]
    stm = STM(cells, init=[rng.randrange(50) for _ in range(cells)], hooks=sched)
    seen = {}

    def body(tx):
        out = run_program_body(tx, ops)
        if not tx.is_clone:
            att = tx.attachment
            sched.wait_until(lambda: att.clone_done, label="await-clone")
            seen["leader"] = tx.read_log.entries()
            seen["clone"] = att.clone.read_log.entries()
            seen["clock"] = (tx.snapshot, stm.seqlock.value)
        return out

    sched.spawn(lambda: stm.run(body, strategy=Strategy.LAZY_HELPER_CLONE), name="leader")
    try:
        sched.run()
    finally:
        stm.close()
    no_commits = seen["clock"][0] == seen["clock"][1]
    return no_commits and seen["leader"] == seen["clone"] and stm.stats.aborts == 0


def test_c09_clone_read_log_equivalence():
    good = sum(_clone_equivalence_trial(seed) for seed in range(100))
    record(9, good == 100, f"{good}/100 identical leader and clone read logs")


# -- 10: workload characteristics -----------------------------------------------------

def test_c10_workload_buckets():
    rows = []
    ok = True
    for name in WORKLOADS:
        r = self_check(name)
        ok &= r.ok
        rows.append(f"{name}: {'match' if r.ok else 'MISMATCH'} "
                    f"{r.measured_buckets.as_dict()}")
    record(10, ok, "; ".join(rows))


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
