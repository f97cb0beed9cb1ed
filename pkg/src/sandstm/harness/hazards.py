"""Hazard-injection scenarios: tiny programs that drive a lazy transaction into inconsistency.

Every scenario has a victim ("leader") running the strategy under test and a
conflicting writer that commits under Eager, so that the leader's read set is
stale at a known point.  In scripted mode the leader waits on a gate after its
first read until the writer is done, which forces the hazard; in explore mode
the gates are off and the oracle enumerates every interleaving instead.
"""

import random
from dataclasses import dataclass, field

from .._types import Strategy
from ..core import STM, Counters
from ..errors import AbortReason, GuardCorruption, TransactionFault
from ..oracle import ScheduleSpec, check_serializable, explore_schedules
from ..sandbox import CloneRegistry
from ..sched import DeterministicScheduler, FirstChooser

HAZARDS = ("privatization-fault", "doomed-loop", "stray-stack-write", "clone-miss",
           "over-allocation")

# mechanisms that abort without validating the read set
IMMEDIATE = frozenset({AbortReason.STALE_FAULT, AbortReason.GUARD, AbortReason.CLONE_MISS})

BEACON_HZ = 100.0


def designated(name, strategy):
    """The abort reason that must contain ``name`` under ``strategy``."""
    strategy = Strategy.parse(strategy)
    if name == "privatization-fault":
        return AbortReason.STALE_FAULT
    if strategy is Strategy.EAGER:
        return AbortReason.VALIDATION  # eager never reaches the hazard
    if name == "doomed-loop":
        return AbortReason.BEACON if strategy is Strategy.LAZY_TIMER else AbortReason.DOOMED
    return {"stray-stack-write": AbortReason.GUARD, "clone-miss": AbortReason.CLONE_MISS,
            "over-allocation": AbortReason.BUDGET}[name]


class ContainmentFailure(AssertionError):
    pass


@dataclass
class HazardOutcome:
    name: str
    strategy: Strategy
    seed: int
    contained: bool
    mechanism: AbortReason = None  # reason the first (hazardous) attempt aborted with
    expected: AbortReason = None
    validations_on_path: int = None  # leader full validations between attempt start and abort
    propagated_faults: int = 0
    guard_corruptions: int = 0
    doom_latency: float = None  # virtual seconds from conflicting commit to loop exit
    doom_latency_rounds: int = None  # helper rounds from conflicting commit to doom
    counters: dict = field(default_factory=dict)
    results: tuple = ()
    problems: list = field(default_factory=list)
    trace: list = field(default_factory=list)

    def raise_for_containment(self):
        if not self.contained:
            lines = [f"{self.name} under {self.strategy.value} (seed {self.seed}) not contained:"]
            lines += [f"  {p}" for p in self.problems]
            lines.append("trace:")
            lines += [f"  {name}: {label}" for name, label in self.trace]
            raise ContainmentFailure("\n".join(lines))
        return self

    def summary(self):
        mech = self.mechanism.value if self.mechanism else "none"
        s = (f"{self.name} [{self.strategy.value}] contained={self.contained} mechanism={mech} "
             f"validations_on_path={self.validations_on_path}")
        if self.doom_latency is not None:
            s += f" latency={self.doom_latency * 1e3:.1f}ms"
        if self.doom_latency_rounds is not None:
            s += f" latency_rounds={self.doom_latency_rounds}"
        return s


class _Run:
    """Shared state of one scenario execution."""

    def __init__(self, sched, strategy, scripted, rng):
        self.sched = sched
        self.strategy = Strategy.parse(strategy)
        self.scripted = scripted
        self.rng = rng
        self.flags = set()
        self.gated = False
        self.counters = Counters()
        self.attempt_fv = {}  # attempt -> full_validations at body start
        self.marked = {}  # attempt -> hazard-specific note
        self.results = {}
        self.propagated = []
        self.corruptions = []
        self.stm = None
        self.commit_clock = None
        self.commit_rounds = None
        self.sandbox = None  # the leader's sandbox state (carries the doom round)

    def enter(self, tx):
        if not tx.is_clone:
            self.attempt_fv[tx.attempt] = self.counters.full_validations
            self.sandbox = tx.sandbox

    def mark(self, tx, note):
        if not tx.is_clone:
            self.marked.setdefault(tx.attempt, note)

    def signal(self, flag):
        self.flags.add(flag)

    def wait(self, flag):
        if self.scripted:
            self.sched.wait_until(lambda: flag in self.flags, label=f"gate:{flag}")

    def gate(self, tx, ready, until):
        """Leader side: first non-clone pass announces ``ready`` then waits for ``until``."""
        if tx.is_clone or self.gated:
            return
        self.gated = True
        self.signal(ready)
        self.wait(until)

    def spawn(self, name, fn):
        def task():
            try:
                self.results[name] = fn()
            except GuardCorruption as e:
                self.corruptions.append(e)
            except TransactionFault as e:
                self.propagated.append(e)
        self.sched.spawn(task, name=name, daemon=False)

    def lead(self, body, *args):
        return self.stm.run(body, *args, strategy=self.strategy, counters=self.counters)

    def commit_conflict(self, body):
        """Writer side: commit ``body`` under Eager and note when it happened."""
        self.wait("loaded")
        self.stm.run(body, strategy=Strategy.EAGER)
        self.commit_clock = self.stm.commit_times[-1]
        self.commit_rounds = self.counters.helper_rounds
        self.signal("committed")

    def aborts(self):
        """(reason, attempt, full validations on the attempt's path) per leader abort."""
        return [(reason, att, fv - self.attempt_fv.get(att, 0))
                for _, reason, att, fv, _ in self.counters.abort_log]


def _stm(run, size, init, **kw):
    kw.setdefault("beacon_min_hz", BEACON_HZ)
    kw.setdefault("beacon_max_hz", BEACON_HZ)
    kw.setdefault("beacon_initial_hz", BEACON_HZ)
    run.stm = STM(size, init=init, hooks=run.sched, record=True, **kw)
    return run.stm


# -- the programs ------------------------------------------------------------------

PTR, OBJ = 0, 4


def _privatization(run):
    """Reader follows a shared pointer; the privatizer nulls it and frees the object."""
    obj_val = run.rng.randrange(1, 1000)
    stm = _stm(run, 8, [OBJ, 0, 0, 0, obj_val, obj_val + 1, 0, 0])

    def reader(tx):
        run.enter(tx)
        p = tx.read(PTR)
        run.gate(tx, "loaded", "freed")
        if p == 0:
            return None
        run.mark(tx, "deref")
        return tx.load(p)

    def privatizer():
        run.wait("loaded")
        stm.run(lambda tx: tx.write(PTR, 0), strategy=Strategy.EAGER)
        run.commit_clock = stm.commit_times[-1]
        stm.heap.unmap(OBJ, OBJ + 2)
        run.signal("freed")

    run.spawn("reader", lambda: run.lead(reader))
    run.spawn("privatizer", privatizer)
    return {"obj": obj_val}


X, Y = 0, 1


def _doomed_loop(run):
    """Leader loops until x == y; an inconsistent snapshot never terminates on its own."""
    # padding shifts the beacon phase against the commit; exploration runs the bare program
    pad = run.rng.randrange(0, 6) if run.scripted else 0
    writer_pad = run.rng.randrange(0, 6) if run.scripted else 0
    stm = _stm(run, 4, [0, 0, 0, 0])

    def leader(tx):
        run.enter(tx)
        for _ in range(pad if not run.gated else 0):
            tx.read(3)
        a = tx.read(X)
        run.gate(tx, "loaded", "committed")
        while True:
            b = tx.read(Y)
            if a == b:
                return a
            run.mark(tx, "inconsistent")
            tx.progress()

    def writer(tx):
        for _ in range(writer_pad):
            tx.read(3)
        tx.write(X, 1)
        tx.write(Y, 1)

    run.spawn("leader", lambda: run.lead(leader))
    run.spawn("writer", lambda: run.commit_conflict(writer))
    return {"pad": pad, "writer_pad": writer_pad}


N, I = 0, 1


def _stray_stack_write(run):
    """Frame sized from one cell, indexed by another; a mixed snapshot indexes past the slots."""
    n0 = run.rng.randrange(2, 6)
    i0 = run.rng.randrange(0, n0)
    n1 = n0 + run.rng.randrange(1, 3)
    i1 = n0 + run.rng.randrange(0, n1 - n0)  # in range for n1, a guard slot for n0
    stm = _stm(run, 4, [n0, i0, 0, 0])

    def leader(tx):
        run.enter(tx)
        n = tx.read(N)
        frame = tx.push_frame(n)
        run.gate(tx, "loaded", "committed")
        i = tx.read(I)
        if i >= n:
            run.mark(tx, "stray")
        tx.store(frame.addr(i), 99)
        v = frame[i]
        tx.pop_frame()
        return (n, i, v)

    def writer(tx):
        tx.write(N, n1)
        tx.write(I, i1)

    run.spawn("leader", lambda: run.lead(leader))
    run.spawn("writer", lambda: run.commit_conflict(writer))
    return {"n0": n0, "n1": n1, "i1": i1}


HI, LO, OUT = 0, 1, 2


def _clone_miss(run):
    """The callee id is computed from two cells; a mixed snapshot names an unregistered one."""
    registry = CloneRegistry({1: "f_tx", 16: "g_tx"})
    stm = _stm(run, 4, [0, 1, 0, 0], registry=registry)

    def leader(tx):
        run.enter(tx)
        hi = tx.read(HI)
        run.gate(tx, "loaded", "committed")
        lo = tx.read(LO)
        fn = hi * 16 + lo
        if fn not in registry:
            run.mark(tx, "miss")
        clone = tx.lookup_clone(fn)
        tx.write(OUT, 1 if clone == "f_tx" else 2)
        return clone

    def writer(tx):
        tx.write(HI, 1)
        tx.write(LO, 0)

    run.spawn("leader", lambda: run.lead(leader))
    run.spawn("writer", lambda: run.commit_conflict(writer))
    return {}


A, B, SIZE = 0, 1, 2


def _over_allocation(run):
    """Allocation size is a product of two cells; a mixed snapshot asks for far too much."""
    a0 = run.rng.randrange(512, 4097)
    b1 = run.rng.randrange(1 << 20, (1 << 22) + 1)
    a1 = run.rng.randrange(2, 17)
    stm = _stm(run, 4, [a0, 64, 0, 0])
    run.grants = {}  # attempt -> full validations spent before the grant

    def leader(tx):
        run.enter(tx)
        a = tx.read(A)
        run.gate(tx, "loaded", "committed")
        b = tx.read(B)
        block = tx.alloc(a * b)
        if not tx.is_clone:
            run.grants[tx.attempt] = run.counters.full_validations - run.attempt_fv[tx.attempt]
        tx.write(SIZE, a * b)
        return block

    def writer(tx):
        tx.write(A, a1)
        tx.write(B, b1)

    run.spawn("leader", lambda: run.lead(leader))
    run.spawn("writer", lambda: run.commit_conflict(writer))
    return {"a0": a0, "a1": a1, "b1": b1}


PROGRAMS = {
    "privatization-fault": _privatization,
    "doomed-loop": _doomed_loop,
    "stray-stack-write": _stray_stack_write,
    "clone-miss": _clone_miss,
    "over-allocation": _over_allocation,
}


# -- judging ---------------------------------------------------------------------

def _check_common(run, name):
    problems = []
    if run.propagated:
        problems.append(f"{len(run.propagated)} fault(s) escaped the transaction: {run.propagated[0]}")
    if run.corruptions:
        problems.append(f"guard corruption: {run.corruptions[0]}")
    verdict = check_serializable(run.stm.history())
    if not verdict.ok:
        problems.append(f"history not serializable: {verdict.witness}")
    if name == "over-allocation":
        kept = {b.handle for b in run.results.values() if b is not None}
        leaked = set(run.stm.allocator.live) - kept
        if leaked:
            problems.append(f"{len(leaked)} allocation(s) leaked by aborted attempts")
    return problems


def _check_paths(run, name):
    """Every attempt that reached the hazard ended by an allowed mechanism (explore mode)."""
    want = designated(name, run.strategy)
    problems = []
    ended = {att: (reason, fv) for reason, att, fv in run.aborts()}
    for reason, att, fv in run.aborts():
        if reason in IMMEDIATE and fv != 0:
            problems.append(f"{reason.value} abort of attempt {att} after {fv} validation(s)")
    for att, note in run.marked.items():
        if note == "deref" and att not in ended:
            continue  # dereferenced a still-live object: a consistent read
        reason = ended.get(att, (None,))[0]
        if note == "inconsistent":
            ok = reason is want
        elif note == "stray":
            # a doom delivered at the store's entry stops the write before it happens
            ok = reason in (want, AbortReason.DOOMED, AbortReason.BEACON)
        elif note == "miss":
            ok = reason in (want, AbortReason.DOOMED, AbortReason.BEACON)
        else:
            ok = True
        if not ok:
            got = reason.value if reason else "commit"
            problems.append(f"attempt {att} hit the {note} hazard and ended by {got}, "
                            f"expected {want.value}")
    return problems


def _judge_scripted(run, name, seed, sched, params):
    want = designated(name, run.strategy)
    problems = _check_common(run, name)
    aborts = run.aborts()
    mechanism = fv = None
    if aborts:
        mechanism, _, fv = aborts[0]
    if mechanism is not want:
        got = mechanism.value if mechanism else "no abort"
        problems.append(f"first attempt ended by {got}, expected {want.value}")
    if want in IMMEDIATE and fv not in (None, 0):
        problems.append(f"{want.value} abort after {fv} read-set validation(s)")
    latency = rounds = None
    if name == "doomed-loop" and mechanism is not None and run.commit_clock is not None:
        abort_time = run.counters.abort_log[0][0]
        latency = abort_time - run.commit_clock[1]
        if run.strategy is Strategy.LAZY_TIMER and latency > 2.0 / BEACON_HZ + 1e-9:
            problems.append(f"loop exited {latency * 1e3:.1f} ms after the commit "
                            f"(bound {2e3 / BEACON_HZ:.0f} ms)")
        if run.strategy.uses_helper:
            doom_round = run.sandbox.doom_round
            if doom_round is not None:
                rounds = doom_round - run.commit_rounds
                if rounds > 1:
                    problems.append(f"doom took {rounds} helper rounds")
    if name == "over-allocation" and run.strategy.lazy:
        first_att = aborts[0][1] if aborts else None
        if first_att in run.grants:
            problems.append("the doomed attempt was granted its allocation")
        retries = [fv for att, fv in run.grants.items() if att != first_att]
        if retries != [1]:
            problems.append(f"valid over-budget grant after {retries} validation(s), expected [1]")
    return HazardOutcome(
        name=name, strategy=run.strategy, seed=seed, contained=not problems,
        mechanism=mechanism, expected=want, validations_on_path=fv,
        propagated_faults=len(run.propagated), guard_corruptions=len(run.corruptions),
        doom_latency=latency, doom_latency_rounds=rounds, counters=run.counters.as_dict(),
        results=tuple(sorted((k, repr(v)) for k, v in run.results.items())),
        problems=problems, trace=list(sched.trace or ()))


def run_hazard_scenario(name, strategy, seed=0, tick=0.001):
    """Drive the scripted interleaving of ``name`` and report how it was contained."""
    if name not in PROGRAMS:
        raise ValueError(f"unknown hazard {name!r}; choose from {', '.join(HAZARDS)}")
    sched = DeterministicScheduler(FirstChooser(), tick=tick, trace=True)
    run = _Run(sched, strategy, scripted=True, rng=random.Random(seed))
    params = PROGRAMS[name](run)
    try:
        sched.run()
    finally:
        run.stm.close()
    return _judge_scripted(run, name, seed, sched, params)


# -- exhaustive mode -------------------------------------------------------------

@dataclass
class HazardExploration:
    name: str
    strategy: Strategy
    schedules: int
    outcomes: set
    problems: list  # (helper policy, choices, problem)
    max_yield_points: int
    hazardous: int  # schedules in which the hazard was reached

    @property
    def contained(self):
        return not self.problems


def hazard_spec(name, strategy, seed=0, max_yield_points=20):
    """ScheduleSpec exploring every interleaving of ``name`` (no gates)."""
    problems = []

    def build(sched, strat):
        run = _Run(sched, strat, scripted=False, rng=random.Random(seed))
        PROGRAMS[name](run)

        def observe():
            found = _check_common(run, name) + _check_paths(run, name)
            problems.extend(found)
            reasons = tuple(sorted({r.value for r, _, _ in run.aborts()}))
            hazardous = (any(note != "deref" for note in run.marked.values())
                         or any(r in IMMEDIATE for r, _, _ in run.aborts()))
            return (tuple(sorted((k, repr(v)) for k, v in run.results.items())), reasons,
                    bool(found), hazardous)
        return run.stm, observe

    return ScheduleSpec(build, strategy, max_yield_points=max_yield_points, name=name), problems


def explore_hazard(name, strategy, seed=0, max_yield_points=20):
    spec, problems = hazard_spec(name, strategy, seed, max_yield_points)
    result = explore_schedules(spec)
    flagged = [(pol, choices) for pol, choices, outcome in result.per_schedule if outcome[2]]
    return HazardExploration(name, Strategy.parse(strategy), result.schedules, result.outcomes,
                             [(*f, p) for f, p in zip(flagged, problems)],
                             result.max_yield_points,
                             sum(1 for _, _, outcome in result.per_schedule if outcome[3]))


__all__ = ["ContainmentFailure", "HAZARDS", "HazardExploration", "HazardOutcome", "designated",
           "explore_hazard", "hazard_spec", "run_hazard_scenario"]
