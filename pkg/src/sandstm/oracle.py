"""Ground truth at desk scale: serializability checks and exhaustive schedule search."""

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ExplorationBoundExceeded
from .history import History
from ._types import Strategy
from .sched import Chooser, DeterministicScheduler


@dataclass(frozen=True)
class Violation:
    kind: str  # "read", "final" or "clock"
    record: int = -1  # index into history.commits
    tx: int = -1
    addr: int = -1
    expected: int = -1  # value logged by the transaction (or final snapshot value)
    actual: int = -1  # value the serial replay produced

    def __str__(self):
        if self.kind == "read":
            return (f"tx {self.tx} (record {self.record}) read cell {self.addr} = {self.expected}, "
                    f"serial replay has {self.actual}")
        if self.kind == "final":
            return f"final cell {self.addr} = {self.expected}, serial replay has {self.actual}"
        return f"commit clocks out of order at record {self.record}"


@dataclass(frozen=True)
class SerialVerdict:
    ok: bool
    witness: Violation = None
    order: tuple = ()

    def __bool__(self):
        return self.ok


def _pack(records):
    n_reads = sum(len(r.reads) for r in records)
    n_writes = sum(len(r.writes) for r in records)
    reads = np.zeros((max(n_reads, 1), 2), dtype=np.uint64)
    writes = np.zeros((max(n_writes, 1), 2), dtype=np.uint64)
    read_off = np.zeros(len(records) + 1, dtype=np.int64)
    write_off = np.zeros(len(records) + 1, dtype=np.int64)
    i = j = 0
    for k, rec in enumerate(records):
        for a, v in rec.reads:
            reads[i] = (a, v)
            i += 1
        for a, v in rec.writes:
            writes[j] = (a, v)
            j += 1
        read_off[k + 1] = i
        write_off[k + 1] = j
    return reads, read_off, writes, write_off


def _final_mismatch(state, final):
    for addr, (got, want) in enumerate(zip(state, final)):
        if int(got) != int(want):
            return Violation("final", addr=addr, expected=int(want), actual=int(got))
    return None


def check_serializable(history, mode="commit-order"):
    """Replay committed records serially from the initial snapshot.

    ``commit-order`` replays in commit-clock order (the order the global
    sequence lock imposes); ``permutation`` searches every order and is only
    meant to cross-check the first mode on small histories.
    """
    if mode == "permutation":
        return check_permutations(history)
    if mode != "commit-order":
        raise ValueError(f"unknown mode {mode!r}")
    records = history.commits
    last_writer = None
    last_clock = None
    for k, rec in enumerate(records):
        if last_clock is not None and rec.clock < last_clock:
            return SerialVerdict(False, Violation("clock", record=k, tx=rec.tx))
        if rec.writer:
            if last_writer is not None and rec.clock <= last_writer:
                return SerialVerdict(False, Violation("clock", record=k, tx=rec.tx))
            last_writer = rec.clock
        last_clock = rec.clock
    state = np.asarray(history.initial, dtype=np.uint64).copy()
    reads, read_off, writes, write_off = _pack(records)
    r, i = _kernels.replay(state, reads, read_off, writes, write_off)
    if r >= 0:
        addr, logged = int(reads[i, 0]), int(reads[i, 1])
        # the kernel stops before applying record r, so state is as of record r's turn
        return SerialVerdict(False, Violation("read", record=r, tx=records[r].tx, addr=addr,
                                              expected=logged, actual=int(state[addr])))
    bad = _final_mismatch(state, history.final)
    if bad is not None:
        return SerialVerdict(False, bad)
    return SerialVerdict(True, order=tuple(range(len(records))))


def _serial_ok(initial, records, final):
    state = list(initial)
    for rec in records:
        for a, v in rec.reads:
            if state[a] != v:
                return False
        for a, v in rec.writes:
            state[a] = v
    return state == list(final)


def check_permutations(history, limit=8):
    """Brute force: is there any serial order reproducing every read and the final state?"""
    records = history.commits
    if len(records) > limit:
        raise ValueError(f"permutation search limited to {limit} records, got {len(records)}")
    for order in itertools.permutations(range(len(records))):
        if _serial_ok(history.initial, [records[i] for i in order], history.final):
            return SerialVerdict(True, order=order)
    witness = check_serializable(history).witness or Violation("final")
    return SerialVerdict(False, witness)


# -- exhaustive exploration ---------------------------------------------------------

# TM API entries: the only interleaving points observable through the library
API_LABELS = frozenset({"read", "write", "commit", "progress", "store", "load", "alloc",
                        "clone_lookup"})
HELPER_POLICIES = ("lazy", "eager")


class _DFSChooser(Chooser):
    """Replays ``prefix`` then takes the first candidate; branches over program tasks only.

    Helper (daemon) tasks follow a fixed policy instead of being branched on:
    ``lazy`` runs them only when no program task can make progress (the worst
    case for doom latency), ``eager`` runs them before any program task.
    """

    def __init__(self, prefix, bound, helper_policy="lazy"):
        if helper_policy not in HELPER_POLICIES:
            raise ValueError(f"unknown helper policy {helper_policy!r}")
        self.prefix = prefix
        self.bound = bound
        self.policy = helper_policy
        self.choices = []

    def choose(self, sched, candidates):
        programs = [t for t in candidates if not t.daemon]
        helpers = [t for t in candidates if t.daemon]
        if helpers and (self.policy == "eager" or not programs):
            return helpers[0]
        if len(programs) == 1:
            return programs[0]
        k = len(self.choices)
        if k >= self.bound:
            raise ExplorationBoundExceeded(
                f"schedule needs more than {self.bound} scheduling decisions")
        idx = self.prefix[k] if k < len(self.prefix) else 0
        self.choices.append((idx, len(programs)))
        return programs[idx]

    def next_prefix(self):
        choices = list(self.choices)
        while choices and choices[-1][0] + 1 >= choices[-1][1]:
            choices.pop()
        if not choices:
            return None
        return [c for c, _ in choices[:-1]] + [choices[-1][0] + 1]


@dataclass
class ScheduleSpec:
    """A tiny concurrent program to explore exhaustively.

    ``build(sched, strategy)`` must create a fresh STM on ``sched``, spawn the
    program's tasks (non-daemon) and return ``(stm, observe)``; ``observe()`` is
    called after the run and returns a hashable outcome.  ``max_yield_points``
    bounds the TM API entries the programs make in any one schedule.
    """

    build: object
    strategy: object = None
    max_yield_points: int = 20
    tick: float = 0.001
    max_steps: int = 20_000
    name: str = "program"
    helper_policies: tuple = HELPER_POLICIES


@dataclass
class Exploration:
    outcomes: set = field(default_factory=set)
    schedules: int = 0
    max_decisions: int = 0
    max_yield_points: int = 0
    violations: list = field(default_factory=list)  # (policy, choices, SerialVerdict)
    per_schedule: list = field(default_factory=list)  # (policy, choices, outcome), DFS order


def _api_yields(sched):
    daemon = {t.name: t.daemon for t in sched.tasks}
    return sum(1 for name, label in sched.trace if not daemon[name] and label in API_LABELS)


def explore_schedules(spec):
    """Run ``spec`` under every interleaving of its programs' yield points (depth-first).

    Raises ExplorationBoundExceeded rather than truncating the search.
    """
    result = Exploration()
    policies = spec.helper_policies
    if spec.strategy is None or not Strategy.parse(spec.strategy).uses_helper:
        policies = policies[:1]  # no helper tasks: the policy makes no difference
    for policy in policies:
        prefix = []
        while prefix is not None:
            chooser = _DFSChooser(prefix, spec.max_yield_points, policy)
            sched = DeterministicScheduler(chooser, tick=spec.tick, max_steps=spec.max_steps,
                                           trace=True)
            stm, observe = spec.build(sched, spec.strategy)
            try:
                sched.run()
            finally:
                stm.close()
            n_yields = _api_yields(sched)
            if n_yields > spec.max_yield_points:
                raise ExplorationBoundExceeded(
                    f"{spec.name}: a schedule makes {n_yields} TM API calls "
                    f"(bound {spec.max_yield_points})")
            outcome = observe()
            choices = tuple(c for c, _ in chooser.choices)
            result.outcomes.add(outcome)
            result.per_schedule.append((policy, choices, outcome))
            result.schedules += 1
            result.max_decisions = max(result.max_decisions, len(choices))
            result.max_yield_points = max(result.max_yield_points, n_yields)
            if stm.recorder is not None:
                verdict = check_serializable(stm.history())
                if not verdict.ok:
                    result.violations.append((policy, choices, verdict))
            prefix = chooser.next_prefix()
    return result


def record_history(stm):
    """History of a run made with ``STM(..., record=True)``."""
    return stm.history()


__all__ = ["Exploration", "History", "ScheduleSpec", "SerialVerdict", "Violation",
           "random_history", "random_program", "run_program_body",
           "check_permutations", "check_serializable", "explore_schedules", "record_history"]


# -- randomized histories ------------------------------------------------------------

def random_program(rng, max_cells=8, max_threads=4, max_ops=8, max_txs=2):
    """Random straight-line transactions: ``(cells, [[ops per tx] per thread])``.

    An op is ``("r", addr)`` or ``("w", addr, k)``; a write stores ``k`` plus the
    sum of the values read so far, so written data depends on what was read.
    """
    cells = rng.randint(1, max_cells)
    threads = []
    for _ in range(rng.randint(1, max_threads)):
        txs = []
        for _ in range(rng.randint(1, max_txs)):
            ops = []
            for _ in range(rng.randint(1, max_ops)):
                a = rng.randrange(cells)
                ops.append(("r", a) if rng.random() < 0.5 else ("w", a, rng.randrange(1, 100)))
            txs.append(tuple(ops))
        threads.append(txs)
    return cells, threads


def run_program_body(tx, ops):
    acc = 0
    for op in ops:
        if op[0] == "r":
            acc += tx.read(op[1])
        else:
            tx.write(op[1], op[2] + acc)
    return acc


def random_history(seed, strategy, **limits):
    """Run one random program under a seeded random schedule; returns ``(history, stats)``."""
    import random

    from .core import STM
    from .sched import RandomChooser

    rng = random.Random(seed)
    cells, threads = random_program(rng, **limits)
    sched = DeterministicScheduler(RandomChooser(seed), max_steps=100_000)
    stm = STM(cells, init=[rng.randrange(10) for _ in range(cells)], hooks=sched, record=True,
              strategy=strategy)

    def worker(txs):
        for ops in txs:
            stm.run(run_program_body, ops)

    for t, txs in enumerate(threads):
        sched.spawn(worker, txs, name=f"t{t}")
    try:
        sched.run()
    finally:
        stm.close()
    return stm.history(), stm.stats
