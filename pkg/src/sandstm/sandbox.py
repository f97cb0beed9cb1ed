"""Containment of doomed transactions.

Doom notifications are polled: every TM API call and ``tx.progress()`` runs
:func:`doom_check`.  Three out-of-band sources can doom a lazy transaction:

* the beacon (timer-driven validation of the leader's own read set),
* a helper that validates the leader's published read-log prefix,
* a helper that re-executes the body as an eager clone.

Faults, guard hits and clone-lookup misses on a transaction whose clock has
moved abort immediately, without a read-set validation.
"""

import collections
import contextlib
import itertools
import threading
from collections.abc import Mapping
from dataclasses import dataclass, field

from . import _kernels
from ._types import Status, Strategy, Verdict
from .errors import (AbortReason, CloneLookupError, GuardCorruption, HelperAttachError,
                     TransactionFault, TxAbort)


# -- registries and resources ---------------------------------------------------

class CloneRegistry(Mapping):
    """Function id -> transactional clone id.  Frozen once a transaction starts."""

    def __init__(self, entries=None):
        self._map = dict(entries or {})
        self._frozen = False

    def register(self, fn_id, clone_id):
        if self._frozen:
            raise RuntimeError("clone registry is immutable while transactions run")
        self._map[fn_id] = clone_id

    def freeze(self):
        self._frozen = True

    def __getitem__(self, fn_id):
        return self._map[fn_id]

    def __iter__(self):
        return iter(self._map)

    def __len__(self):
        return len(self._map)


@dataclass(frozen=True)
class Block:
    handle: int
    size: int


class Allocator:
    """Byte-accounting allocator shared by all threads (no backing memory)."""

    def __init__(self, capacity):
        self.capacity = capacity
        self.used = 0
        self.live = {}
        self.granted = 0
        self.released = 0
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def allocate(self, size):
        with self._lock:
            if self.used + size > self.capacity:
                return None
            block = Block(next(self._ids), size)
            self.used += size
            self.live[block.handle] = block
            self.granted += 1
            return block

    def release(self, block):
        with self._lock:
            if self.live.pop(block.handle, None) is None:
                raise ValueError(f"double release of block {block.handle}")
            self.used -= block.size
            self.released += 1


# -- beacon -------------------------------------------------------------------

class Beacon:
    """Timer-driven validation with an adaptive frequency in [min_hz, max_hz].

    Frequency doubles when a fire finds an inconsistency and halves after
    ``clean_to_halve`` consecutive clean fires.
    """

    def __init__(self, min_hz=1.0, max_hz=100.0, initial_hz=100.0, clean_to_halve=8,
                 once_per_attempt=False):
        self.min_hz = min_hz
        self.max_hz = max_hz
        self.hz = min(max(initial_hz, min_hz), max_hz)
        self.clean_to_halve = clean_to_halve
        self.once_per_attempt = once_per_attempt
        self.last_fire = 0.0
        self.clean_streak = 0
        self.fires = 0
        self.fired_this_attempt = False
        self.intervals = []

    @property
    def period(self):
        return 1.0 / self.hz

    def arm(self, now):
        self.last_fire = now
        self.fired_this_attempt = False

    def due(self, now):
        if self.once_per_attempt and self.fired_this_attempt:
            return False
        return now - self.last_fire >= self.period

    def record(self, now, inconsistent):
        self.intervals.append(now - self.last_fire)
        self.last_fire = now
        self.fires += 1
        self.fired_this_attempt = True
        if inconsistent:
            self.clean_streak = 0
            self.hz = min(self.hz * 2.0, self.max_hz)
        else:
            self.clean_streak += 1
            if self.clean_streak >= self.clean_to_halve:
                self.clean_streak = 0
                self.hz = max(self.hz / 2.0, self.min_hz)


# -- per-thread and per-run state ---------------------------------------------------

@dataclass
class SandboxState:
    beacon: Beacon = None
    alloc_budget: int = 1 << 20
    max_fault_retries: int = 16
    debug_validation: bool = False
    doomed_attempt: int = None  # doom flag, bound to the attempt it was raised for
    doom_time: float = None
    doom_source: str = None
    doom_round: int = None  # helper_rounds when a helper raised the doom
    oob_suspend_depth: int = 0
    pending: AbortReason = None  # abort latched while suspended
    pending_beacon: bool = False
    alloc_used: int = 0
    alloc_log: list = field(default_factory=list)
    fault_retry: dict = field(default_factory=dict)

    @classmethod
    def for_config(cls, config, ctx=None, strategy=None):
        beacon = None
        if strategy is Strategy.LAZY_TIMER and config.beacon_enabled and ctx is not None:
            beacon = ctx.beacon
        return cls(beacon=beacon, alloc_budget=config.alloc_budget,
                   max_fault_retries=config.max_fault_retries,
                   debug_validation=config.debug_validation)

    def reset_attempt(self):
        self.oob_suspend_depth = 0
        self.pending = None
        self.pending_beacon = False
        self.alloc_used = 0
        self.alloc_log = []

    def doom(self, attempt, now, source):
        self.doom_time = now
        self.doom_source = source
        self.doomed_attempt = attempt

    @property
    def doom_flag(self):
        return self.doomed_attempt is not None


class LeaderContext:
    """What persists per leader thread: its beacon and its helpers."""

    def __init__(self, stm):
        cfg = stm.config
        self.stm = stm
        self.beacon = Beacon(cfg.beacon_min_hz, cfg.beacon_max_hz, cfg.beacon_initial_hz,
                             cfg.clean_fires_to_halve, cfg.beacon_once_per_attempt)
        self.helpers = {}

    def helper(self, strategy):
        h = self.helpers.get(strategy)
        if h is None or h.dead:
            cls = ReadSetHelper if strategy is Strategy.LAZY_HELPER_READSET else CloneHelper
            h = self.helpers[strategy] = cls(self.stm)
        return h


# -- helpers ------------------------------------------------------------------

class Attempt:
    __slots__ = ("tx", "body", "args", "helper", "stop", "finished", "clone", "clone_done")

    def __init__(self, tx, body, args, helper):
        self.tx = tx
        self.body = body
        self.args = args
        self.helper = helper
        self.stop = False
        self.finished = False
        self.clone = None  # latest clone transaction (clone helper only)
        self.clone_done = False  # the clone ran the body to completion


class _CloneCounters:
    """Counter view for a clone: its validation work is booked as the leader's helper work."""

    def __init__(self, leader):
        self._leader = leader
        self.aborts = 0
        self.commits = 0
        self.body_executions = 0
        self.dooms = 0
        self.tm_ops = 0
        self.abort_reasons = collections.Counter()
        self.abort_log = []

    @property
    def validation_comparisons(self):
        return self._leader.helper_comparisons

    @validation_comparisons.setter
    def validation_comparisons(self, value):
        self._leader.helper_comparisons = value

    @property
    def full_validations(self):
        return self._leader.helper_rounds

    @full_validations.setter
    def full_validations(self, value):
        self._leader.helper_rounds = value


class _HelperStop(TxAbort):
    def __init__(self):
        super().__init__(AbortReason.EXPLICIT, "helper stop")


class Helper:
    """One persistent out-of-band validator per leader thread, reused across attempts."""

    kind = "helper"

    def __init__(self, stm):
        self.stm = stm
        self.hooks = stm.hooks
        cfg = stm.config
        self.period = 1.0 / (cfg.helper_hz or cfg.beacon_max_hz)
        self.current = None
        self.shutdown = False
        self.error = None
        self.exited = False
        try:
            self.handle = self.hooks.spawn(self._main, name=f"{self.kind}", daemon=True)
        except Exception as e:  # thread creation failure is a resource error
            raise HelperAttachError(f"cannot start {self.kind}: {e}") from e
        stm._register_helper(self)

    @property
    def dead(self):
        return self.exited or self.error is not None

    def attach(self, att):
        if self.dead:
            raise HelperAttachError(f"{self.kind} is not running: {self.error!r}")
        self.current = att

    def stop(self, att):
        att.stop = True
        self.hooks.wait_until(lambda: att.finished or self.dead, label="oob.stop")
        if self.error is not None:
            raise HelperAttachError(f"{self.kind} failed: {self.error!r}") from self.error

    def shutdown_now(self):
        self.shutdown = True

    def _pending(self):
        att = self.current
        return att is not None and not att.finished

    def _main(self):
        try:
            while True:
                self.hooks.wait_until(lambda: self.shutdown or self._pending(), label="helper.idle")
                if self.shutdown:
                    return
                att = self.current
                try:
                    self._serve(att)
                except Exception as e:
                    self.error = e
                    return
                finally:
                    att.finished = True
        finally:
            self.exited = True

    def _idle_until_changed(self, att, changed):
        if self.hooks.deterministic:
            self.hooks.wait_until(lambda: att.stop or changed(), label=f"{self.kind}.wait")
        else:
            self.hooks.wait_until(lambda: att.stop, timeout=self.period, label=f"{self.kind}.wait")

    def _doom(self, att, source):
        # a doom for an attempt that is already resolving is dropped
        if not att.stop:
            tx = att.tx
            tx.sandbox.doom_round = tx.counters.helper_rounds
            tx.sandbox.doom(tx.attempt, self.hooks.now(), source)

    def _serve(self, att):
        raise NotImplementedError


class ReadSetHelper(Helper):
    """Validates the leader's published read-log prefix against the heap."""

    kind = "helper-readset"

    def _validate_prefix(self, tx):
        seq = self.stm.seqlock
        cells = self.stm.heap.cells
        while True:
            c = seq.wait_even(self.hooks)
            log = tx.read_log
            n = log.published
            idx = _kernels.first_mismatch(cells, log.buf, n)
            self.hooks.yield_point("validate.mid")
            if seq.value == c:
                return idx == n, c, n, min(idx + 1, n)

    def _serve(self, att):
        tx = att.tx
        seq = self.stm.seqlock
        last = None
        first = True
        while first or not att.stop:
            first = False
            if last != (seq.value, tx.read_log.published):
                ok, c, n, compared = self._validate_prefix(tx)
                tx.counters.helper_rounds += 1
                tx.counters.helper_comparisons += compared
                if not ok:
                    self._doom(att, self.kind)
                    return
                last = (c, n)
            self._idle_until_changed(att, lambda: last != (seq.value, tx.read_log.published))


class CloneHelper(Helper):
    """Executes the leader's body as an eager clone that never commits."""

    kind = "helper-clone"

    def _serve(self, att):
        from .core import Transaction

        leader = att.tx
        seq = self.stm.seqlock
        snapshot = leader.snapshot

        def stop_check():
            if att.stop:
                raise _HelperStop()

        # the first clone execution starts even if the leader already asked to stop
        first = True
        while first or not att.stop:
            first = False
            sb = SandboxState(alloc_budget=self.stm.config.alloc_budget,
                              max_fault_retries=self.stm.config.max_fault_retries)
            clone = Transaction(self.stm, Strategy.EAGER, snapshot, _CloneCounters(leader.counters),
                                sb, leader.attempt, tx_id=leader.tx_id, body_id=leader.body_id,
                                clone_of=leader, stop_check=stop_check)
            att.clone = clone
            att.clone_done = False
            leader.counters.helper_executions += 1
            try:
                outcome = self._execute(clone, att)
                att.clone_done = outcome == "done"
                while outcome == "done":
                    last = clone.snapshot
                    self._idle_until_changed(att, lambda: seq.value != last)
                    if att.stop:
                        return
                    if seq.value == last:
                        continue
                    if clone.read_log.n < leader.read_log.published:
                        outcome = "conflict"
                        break
                    ok, clock = clone.validate_stable()
                    if not ok:
                        outcome = "conflict"
                    clone.snapshot = clock
            finally:
                compensate_allocations(clone)
            if outcome == "conflict":
                self._doom(att, self.kind)
                snapshot = seq.wait_even(self.hooks)
                continue
            if outcome == "idle":
                self.hooks.wait_until(lambda: att.stop, label=f"{self.kind}.idle")
            return

    def _execute(self, clone, att):
        try:
            att.body(clone, *att.args)
            return "done"
        except _HelperStop:
            return "stopped"
        except TxAbort as e:
            return "conflict" if e.reason is AbortReason.VALIDATION else "idle"
        except GuardCorruption:
            raise
        except Exception:
            return "idle" if clone.validate() else "conflict"


def _clone_hazard(tx):
    """A clone is eager: a hazard is either a fresh conflict or a genuine application error."""
    if not tx.validate():
        raise TxAbort(AbortReason.VALIDATION)
    raise TxAbort(AbortReason.EXPLICIT, "clone idles on consistent hazard")


# -- out-of-band validation lifecycle ----------------------------------------------

def oob_start(tx, strategy, body=None, args=()):
    sb = tx.sandbox
    if strategy is Strategy.LAZY_TIMER:
        if sb.beacon is not None:
            sb.beacon.arm(tx.hooks.now())
    elif strategy.uses_helper:
        if strategy is Strategy.LAZY_HELPER_CLONE and body is None:
            raise ValueError("the clone helper needs the transaction body")
        helper = tx.stm.leader_context().helper(strategy)
        att = Attempt(tx, body, args, helper)
        helper.attach(att)
        tx.attachment = att
    tx.stm.registry.freeze()


def oob_stop(tx):
    att = tx.attachment
    if att is None:
        return
    tx.attachment = None
    att.helper.stop(att)


def _deliver(tx, reason):
    if reason is AbortReason.DOOMED:
        tx.status = Status.DOOMED
        tx.counters.dooms += 1
    raise TxAbort(reason)


def _fire_beacon(tx):
    sb = tx.sandbox
    now = tx.hooks.now()
    ok = tx.validate()
    sb.beacon.record(now, inconsistent=not ok)
    if not ok:
        sb.doom(tx.attempt, now, "beacon")
        tx.counters.dooms += 1
        tx.status = Status.DOOMED
        raise TxAbort(AbortReason.BEACON)


def doom_check(tx):
    sb = tx.sandbox
    if sb.doomed_attempt == tx.attempt:
        if sb.oob_suspend_depth > 0:
            sb.pending = sb.pending or AbortReason.DOOMED
            return
        _deliver(tx, AbortReason.DOOMED)
    beacon = sb.beacon
    if beacon is not None and beacon.due(tx.hooks.now()):
        if sb.oob_suspend_depth > 0:
            sb.pending_beacon = True
            return
        _fire_beacon(tx)


def tx_progress(tx):
    tx.hooks.yield_point("progress", spin=True)
    tx.counters.tm_ops += 1
    if tx.strategy is Strategy.EAGER and not tx.is_clone:
        return
    tx._poll()


# -- suspension ---------------------------------------------------------------

def oob_suspend(tx):
    tx.sandbox.oob_suspend_depth += 1


def oob_resume(tx):
    sb = tx.sandbox
    if sb.oob_suspend_depth <= 0:
        raise AssertionError("oob_resume without matching oob_suspend")
    sb.oob_suspend_depth -= 1
    if sb.oob_suspend_depth:
        return
    if sb.pending is not None:
        reason, sb.pending = sb.pending, None
        sb.pending_beacon = False
        _deliver(tx, reason)
    if sb.pending_beacon:
        sb.pending_beacon = False
        _fire_beacon(tx)


@contextlib.contextmanager
def suspended(tx):
    oob_suspend(tx)
    try:
        yield
    except BaseException:
        tx.sandbox.oob_suspend_depth = max(0, tx.sandbox.oob_suspend_depth - 1)
        raise
    oob_resume(tx)


# -- verdicts -------------------------------------------------------------------

def fault_raise(tx, site, info=None):
    """Decide whether a fault is a symptom of inconsistency or an application error."""
    if tx.is_clone:
        _clone_hazard(tx)
    sb = tx.sandbox
    if tx.seqlock.value == tx.snapshot:
        sb.fault_retry.pop(site, None)
        return Verdict.PROPAGATE_CONSISTENT
    retries = sb.fault_retry.get(site, 0)
    if retries >= sb.max_fault_retries and tx.validate():
        sb.fault_retry.pop(site, None)
        return Verdict.PROPAGATE_CONSISTENT
    sb.fault_retry[site] = retries + 1
    return Verdict.ABORT_RETRY


def clone_lookup(tx, registry, fn_id):
    tx._enter("clone_lookup")
    clone_id = registry.get(fn_id)
    if clone_id is not None:
        return clone_id
    if tx.is_clone:
        _clone_hazard(tx)
    if tx.sandbox.debug_validation and tx.validate():
        raise CloneLookupError(("clone_lookup", fn_id), f"no transactional clone for {fn_id!r}")
    raise TxAbort(AbortReason.CLONE_MISS, fn_id)


# -- allocation ------------------------------------------------------------------

def tx_alloc(tx, size):
    tx._enter("alloc")
    if size <= 0:
        raise ValueError("allocation size must be positive")
    sb = tx.sandbox
    over = sb.alloc_used + size > sb.alloc_budget
    if over:
        if not tx.validate():
            if tx.is_clone:
                raise TxAbort(AbortReason.VALIDATION)
            raise TxAbort(AbortReason.BUDGET, size)
    with suspended(tx):
        block = tx.stm.allocator.allocate(size)
        if block is not None:
            sb.alloc_log.append(block)
        tx.hooks.yield_point("alloc.internal")
        doom_check(tx)
    if block is None:
        tx.fault(("alloc", size), MemoryError(f"cannot allocate {size} bytes"))
    sb.alloc_used = 0 if over else sb.alloc_used + size
    return block


def compensate_allocations(tx):
    sb = tx.sandbox
    log, sb.alloc_log = sb.alloc_log, []
    for block in reversed(log):
        tx.stm.allocator.release(block)


def discharge_allocations(tx):
    tx.sandbox.alloc_log = []


__all__ = [
    "Allocator", "Beacon", "Block", "CloneRegistry", "CloneHelper", "ReadSetHelper",
    "SandboxState", "TransactionFault", "clone_lookup", "doom_check", "fault_raise",
    "oob_resume", "oob_start", "oob_stop", "oob_suspend", "suspended", "tx_alloc", "tx_progress",
]
