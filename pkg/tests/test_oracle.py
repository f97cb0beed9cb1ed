import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sandstm import (STM, CommitRecord, DeterministicScheduler, ExplorationBoundExceeded,
                     History, RandomChooser, Strategy)
from sandstm import _kernels as k
from sandstm.oracle import (ScheduleSpec, check_permutations, check_serializable,
                            explore_schedules, random_history, record_history)


def rec(tx, reads=(), writes=(), clock=0):
    return CommitRecord(tx, tuple(reads), tuple(writes), clock)


# -- histories ------------------------------------------------------------------------

def test_single_increment_history():
    stm = STM(2, init=[5, 0], record=True)
    stm.run(lambda tx: tx.write(0, tx.read(0) + 1))
    h = record_history(stm)
    assert len(h.commits) == 1 and h.commits[0].reads == ((0, 5),)
    assert h.final == [6, 0] and h.initial == [5, 0]


def test_all_aborted_gives_empty_history():
    stm = STM(2, record=True)
    tx = stm.begin(Strategy.EAGER)
    tx.write(0, 1)
    tx.abort()
    h = stm.history()
    assert h.commits == [] and h.final == h.initial


def test_records_ordered_by_clock():
    sched = DeterministicScheduler(RandomChooser(3))
    stm = STM(4, hooks=sched, record=True)

    def inc(a):
        return lambda: stm.run(lambda tx: tx.write(a, tx.read(a) + 1))
    sched.run_tasks(inc(0), inc(1), inc(0))
    h = stm.history()
    clocks = [r.clock for r in h.commits]
    assert clocks == sorted(clocks) == [2, 4, 6]


def test_history_json_round_trip(tmp_path):
    h, _ = random_history(11, Strategy.EAGER)
    path = tmp_path / "h.json"
    h.save(path)
    assert History.load(path) == h


def test_history_without_recording_rejected():
    with pytest.raises(RuntimeError):
        STM(2).history()


# -- check_serializable ----------------------------------------------------------------

def test_empty_history_ok():
    assert check_serializable(History([0, 0], [], [0, 0])).ok


def test_stale_read_is_named():
    # tx2 committed after tx1 but read the value tx1 had overwritten
    h = History([0, 0], [rec(1, [(0, 0)], [(0, 1)], 2), rec(2, [(0, 0)], [(1, 5)], 4)], [1, 5])
    v = check_serializable(h)
    assert not v.ok
    w = v.witness
    assert (w.kind, w.tx, w.addr, w.expected, w.actual) == ("read", 2, 0, 0, 1)
    assert "tx 2" in str(w)


def test_final_mismatch_detected():
    h = History([0], [rec(1, [], [(0, 3)], 2)], [4])
    v = check_serializable(h)
    assert v.witness.kind == "final"


def test_clock_regression_detected():
    h = History([0, 0], [rec(1, [], [(0, 1)], 4), rec(2, [], [(1, 1)], 2)], [1, 1])
    assert check_serializable(h).witness.kind == "clock"


def test_write_skew_rejected_by_both_routes():
    # each read the other's cell as 0 and wrote its own: no serial order explains it
    h = History([0, 0], [rec(1, [(1, 0)], [(0, 1)], 2), rec(2, [(0, 0)], [(1, 1)], 4)], [1, 1])
    assert not check_serializable(h).ok
    assert not check_permutations(h).ok


def test_permutation_finds_non_commit_order():
    h = History([0], [rec(1, [(0, 1)], [], 2), rec(2, [], [(0, 1)], 4)], [1])
    assert not check_serializable(h).ok
    v = check_permutations(h)
    assert v.ok and v.order == (1, 0)


def test_permutation_limit():
    h = History([0], [rec(i, [], [], 2 * i) for i in range(9)], [0])
    with pytest.raises(ValueError):
        check_permutations(h)


def test_unknown_mode():
    with pytest.raises(ValueError):
        check_serializable(History([0], [], [0]), mode="magic")


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 10 ** 6), strategy=st.sampled_from(list(Strategy)))
def test_property_routes_agree_on_stm_histories(seed, strategy):
    h, _ = random_history(seed, strategy, max_txs=2, max_threads=3)
    if len(h.commits) > 6:
        return
    assert check_serializable(h).ok
    assert check_permutations(h).ok


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 10 ** 6), pick=st.integers(0, 100), delta=st.integers(1, 5))
def test_property_commit_order_ok_implies_permutation_ok(seed, pick, delta):
    h, _ = random_history(seed, Strategy.EAGER, max_txs=2, max_threads=3)
    reads = [(i, j) for i, r in enumerate(h.commits) for j in range(len(r.reads))]
    if len(h.commits) > 6 or not reads:
        return
    i, j = reads[pick % len(reads)]
    r = h.commits[i]
    bad = list(r.reads)
    a, v = bad[j]
    bad[j] = (a, v + delta)
    h.commits[i] = CommitRecord(r.tx, tuple(bad), r.writes, r.clock)
    by_order = check_serializable(h)
    by_perm = check_permutations(h)
    assert not by_order.ok  # a corrupted read is always caught in commit order
    if by_perm.ok:
        # only possible when another serial order happens to explain the corrupted value
        assert by_perm.order != tuple(range(len(h.commits)))


@pytest.mark.skipif(not k.HAS_JIT, reason="numba kernels disabled")
@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_property_replay_backends_agree(seed):
    from sandstm.oracle import _pack
    h, _ = random_history(seed, Strategy.LAZY_TIMER)
    reads, roff, writes, woff = _pack(h.commits)
    a = np.asarray(h.initial, dtype=np.uint64)
    b = a.copy()
    assert tuple(k._replay_jit(a, reads, roff, writes, woff)) == k.replay_np(b, reads, roff, writes, woff)
    assert np.array_equal(a, b)


# -- exploration ----------------------------------------------------------------------

def two_increments(sched, strategy):
    stm = STM(2, hooks=sched, record=True)

    def inc():
        stm.run(lambda tx: tx.write(0, tx.read(0) + 1), strategy=strategy)
    sched.spawn(inc, name="a")
    sched.spawn(inc, name="b")
    return stm, lambda: tuple(stm.heap.snapshot())


@pytest.mark.parametrize("strategy", list(Strategy), ids=lambda s: s.value)
def test_two_increments_collapse_to_sequential(strategy):
    r = explore_schedules(ScheduleSpec(two_increments, strategy))
    assert r.outcomes == {(2, 0)}
    assert r.schedules > 1 and not r.violations
    assert r.max_yield_points <= 20


def test_exploration_is_deterministic():
    spec = ScheduleSpec(two_increments, Strategy.LAZY_HELPER_READSET)
    a, b = explore_schedules(spec), explore_schedules(spec)
    assert a.per_schedule == b.per_schedule and a.outcomes == b.outcomes


def test_exploration_refuses_past_bound():
    with pytest.raises(ExplorationBoundExceeded):
        explore_schedules(ScheduleSpec(two_increments, Strategy.EAGER, max_yield_points=3))


def test_random_history_reproducible():
    a, _ = random_history(5, Strategy.LAZY_HELPER_CLONE)
    b, _ = random_history(5, Strategy.LAZY_HELPER_CLONE)
    assert a == b
