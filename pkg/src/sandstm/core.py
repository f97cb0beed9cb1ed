"""Deferred-update, word-based STM with a global sequence lock.

Transactions buffer writes and log ``(addr, value)`` reads.  Validation is
value based: a read set is consistent iff every logged cell still holds the
logged value while the global clock stays even and unchanged across the pass.
Eager transactions revalidate whenever the clock moved before a read; lazy
transactions validate only at commit and wherever the sandbox asks.
"""

import collections
import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, arena as _arena, sandbox as _sandbox
from ._types import CommitOutcome, Mode, Status, Strategy, Verdict
from .errors import AbortReason, GuardCorruption, TransactionFault, TxAbort
from .history import HistoryRecorder
from .sched import RealHooks

WORD_BITS = 64
WORD_MASK = (1 << WORD_BITS) - 1


class SharedHeap:
    """Shared machine words addressed by dense index.

    ``mapped`` marks cells that may be dereferenced; unmapping models freeing
    memory so that a later access behaves like an access violation.
    """

    def __init__(self, size, init=None):
        if size <= 0:
            raise ValueError("heap size must be positive")
        self.size = int(size)
        self.cells = np.zeros(self.size, dtype=_kernels.WORD)
        self.mapped = np.ones(self.size, dtype=bool)
        if init is not None:
            init = list(init)
            if len(init) > self.size:
                raise ValueError("initial contents larger than heap")
            self.cells[: len(init)] = np.asarray([v & WORD_MASK for v in init], dtype=np.uint64)

    def load(self, addr):
        return int(self.cells[addr])

    def store(self, addr, value):
        """Non-transactional store; only for setup outside running transactions."""
        self.cells[addr] = value & WORD_MASK

    def is_mapped(self, addr):
        return 0 <= addr < self.size and bool(self.mapped[addr])

    def unmap(self, lo, hi=None):
        self.mapped[lo: (lo + 1 if hi is None else hi)] = False

    def map(self, lo, hi=None):
        self.mapped[lo: (lo + 1 if hi is None else hi)] = True

    def snapshot(self):
        return [int(v) for v in self.cells]

    def __len__(self):
        return self.size


class SeqLock:
    """Global version clock: even when quiescent, odd while one writer commits."""

    def __init__(self, value=0, trace=False):
        if value & 1:
            raise ValueError("seqlock must start even")
        self.value = value
        self._cas = threading.Lock()
        self.trace = [value] if trace else None

    def wait_even(self, hooks):
        v = self.value
        while v & 1:
            hooks.yield_point("seqlock.spin", spin=True)
            v = self.value
        return v

    def try_acquire(self, expected):
        with self._cas:
            if self.value != expected:
                return False
            self.value = expected + 1
            if self.trace is not None:
                self.trace.append(self.value)
            return True

    def release(self):
        with self._cas:
            assert self.value & 1, "release without acquire"
            self.value += 1
            if self.trace is not None:
                self.trace.append(self.value)


class ReadLog:
    """Growable ``(addr, value)`` log; the first ``published`` rows are immutable.

    A reader on another thread must read ``published`` before ``buf``: growth
    replaces ``buf`` with a copy before any row beyond the old capacity is
    published, so a stale ``buf`` always covers a fresh ``published``.
    """

    __slots__ = ("buf", "n", "published")

    def __init__(self, capacity=16):
        self.buf = np.empty((capacity, 2), dtype=np.uint64)
        self.n = 0
        self.published = 0

    def append(self, addr, value):
        n = self.n
        if n == self.buf.shape[0]:
            grown = np.empty((2 * n, 2), dtype=np.uint64)
            grown[:n] = self.buf[:n]
            self.buf = grown
        self.buf[n, 0] = addr
        self.buf[n, 1] = value
        self.n = n + 1

    def set_last(self, value):
        assert self.n > self.published
        self.buf[self.n - 1, 1] = value

    def last(self):
        return int(self.buf[self.n - 1, 1])

    def publish(self):
        self.published = self.n

    def entries(self):
        return [(int(a), int(v)) for a, v in self.buf[: self.n]]

    def __len__(self):
        return self.n


@dataclass
class Counters:
    validation_comparisons: int = 0
    full_validations: int = 0
    aborts: int = 0
    commits: int = 0
    body_executions: int = 0
    helper_executions: int = 0
    helper_rounds: int = 0
    helper_comparisons: int = 0
    dooms: int = 0
    tm_ops: int = 0  # TM API calls made by bodies, all attempts
    abort_reasons: collections.Counter = field(default_factory=collections.Counter)
    abort_log: list = field(default_factory=list)  # (time, reason, attempt, full_validations so far, snapshot)

    def merge(self, other):
        for name in ("validation_comparisons", "full_validations", "aborts", "commits",
                     "body_executions", "helper_executions", "helper_rounds",
                     "helper_comparisons", "dooms", "tm_ops"):
            setattr(self, name, getattr(self, name) + getattr(other, name))
        self.abort_reasons.update(other.abort_reasons)
        self.abort_log.extend(other.abort_log)

    def as_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k not in ("abort_reasons", "abort_log")}
        d["abort_reasons"] = {r.value: n for r, n in sorted(self.abort_reasons.items(),
                                                               key=lambda kv: kv[0].value)}
        return d


class Transaction:
    """Per-attempt transaction descriptor (the body's handle on the TM)."""

    def __init__(self, stm, strategy, snapshot, counters, sandbox, attempt,
                 tx_id=None, body_id=None, clone_of=None, stop_check=None):
        self.stm = stm
        self.heap = stm.heap
        self.seqlock = stm.seqlock
        self.hooks = stm.hooks
        self.strategy = strategy
        self.clone_of = clone_of
        self.mode = Mode.EAGER if (strategy is Strategy.EAGER or clone_of is not None) else Mode.LAZY
        self.snapshot = snapshot
        self.read_log = ReadLog()
        self.write_buffer = {}
        self.status = Status.ACTIVE
        self.counters = counters
        self.sandbox = sandbox
        self.attempt = attempt
        self.tx_id = tx_id
        self.body_id = body_id
        self.arena = _arena.LocalArena(stm.config.arena_capacity)
        self.attachment = None
        self._stop_check = stop_check

    # -- introspection -------------------------------------------------------

    @property
    def is_clone(self):
        return self.clone_of is not None

    @property
    def published_read_len(self):
        return self.read_log.published

    def _enter(self, label):
        """Entry of a TM API call: scheduling point, op count, doom poll."""
        self.hooks.yield_point(label)
        self.counters.tm_ops += 1
        self._poll()

    def _poll(self):
        if self.status is not Status.ACTIVE:
            raise TxAbort(AbortReason.DOOMED if self.status is Status.DOOMED else AbortReason.EXPLICIT)
        if self._stop_check is not None:
            self._stop_check()
        else:
            _sandbox.doom_check(self)

    # -- reads and writes ----------------------------------------------------

    def read(self, addr):
        self._enter("read")
        buffered = self.write_buffer.get(addr)
        if buffered is not None:
            return buffered
        return self._load(addr)

    def _load(self, addr):
        heap = self.heap
        if not (0 <= addr < heap.size) or not heap.mapped[addr]:
            return self.fault(("read", addr), "unmapped address")
        log = self.read_log
        log.append(addr, heap.cells[addr])
        if self.mode is Mode.EAGER and self.seqlock.value != self.snapshot:
            self._revalidate_and_extend()
        log.publish()
        return log.last()

    def write(self, addr, value):
        self._enter("write")
        self._buffer(addr, value)

    def _buffer(self, addr, value):
        if not (0 <= addr < self.heap.size) or not self.heap.mapped[addr]:
            return self.fault(("write", addr), "unmapped address")
        self.write_buffer[addr] = value & WORD_MASK

    # -- validation ----------------------------------------------------------

    def _pass(self, n):
        """One comparison pass over the first ``n`` log rows; returns first-mismatch index."""
        idx = _kernels.first_mismatch(self.heap.cells, self.read_log.buf, n)
        self.counters.validation_comparisons += min(idx + 1, n)
        return idx

    def validate_stable(self):
        """Full value-based validation under one stable even clock: ``(ok, clock)``."""
        self.counters.full_validations += 1
        seq = self.seqlock
        while True:
            c = seq.wait_even(self.hooks)
            n = self.read_log.n
            idx = self._pass(n)
            self.hooks.yield_point("validate.mid")
            if seq.value == c:
                return idx == n, c

    def validate(self):
        return self.validate_stable()[0]

    def _revalidate_and_extend(self):
        # The just-loaded row is part of the pass; if it alone is stale it is
        # reloaded under the stable clock instead of aborting.
        if self.clone_of is not None and self.read_log.n - 1 < self.clone_of.read_log.published:
            raise TxAbort(AbortReason.VALIDATION, "clone lagging behind leader")
        self.counters.full_validations += 1
        seq = self.seqlock
        log = self.read_log
        n = log.n
        addr = int(log.buf[n - 1, 0])
        while True:
            c = seq.wait_even(self.hooks)
            idx = self._pass(n)
            self.hooks.yield_point("validate.mid")
            fresh = self.heap.cells[addr]
            if seq.value != c:
                continue
            if idx < n - 1:
                raise TxAbort(AbortReason.VALIDATION)
            if idx == n - 1:
                log.set_last(fresh)
            self.snapshot = c
            return

    # -- completion ----------------------------------------------------------

    def commit(self):
        if self.is_clone:
            raise RuntimeError("a clone transaction never commits")
        self._enter("commit")
        seq = self.seqlock
        if not self.write_buffer:
            if self.mode is Mode.EAGER and seq.value == self.snapshot:
                clock = self.snapshot
            else:
                ok, clock = self.validate_stable()
                if not ok:
                    raise TxAbort(AbortReason.VALIDATION)
            self._committed(clock, ())
            return CommitOutcome.COMMITTED
        while True:
            v = seq.wait_even(self.hooks)
            if self.mode is Mode.LAZY or v != self.snapshot:
                ok, v = self.validate_stable()
                if not ok:
                    raise TxAbort(AbortReason.VALIDATION)
            self.snapshot = v
            if seq.try_acquire(v):
                break
        writes = tuple(self.write_buffer.items())
        addrs = np.fromiter(self.write_buffer.keys(), dtype=np.int64, count=len(writes))
        vals = np.fromiter(self.write_buffer.values(), dtype=np.uint64, count=len(writes))
        try:
            _kernels.write_back(self.heap.cells, addrs, vals)
            self.stm._on_commit(self, writes, v + 2)
        finally:
            seq.release()
        self._committed(v + 2, writes)
        return CommitOutcome.COMMITTED

    def _committed(self, clock, writes):
        if not writes:
            self.stm._on_commit(self, (), clock)
        self.status = Status.COMMITTED
        self.stm._end(self)
        self.counters.commits += 1
        _sandbox.discharge_allocations(self)
        _sandbox.oob_stop(self)

    def abort(self, reason=AbortReason.EXPLICIT):
        """Roll back this attempt; deferred while out-of-band validation is suspended."""
        sb = self.sandbox
        if sb.oob_suspend_depth > 0:
            sb.pending = sb.pending or reason
            return
        if self.status in (Status.ABORTED, Status.COMMITTED):
            return
        self.status = Status.ABORTED
        self.stm._end(self)
        self.counters.aborts += 1
        self.counters.abort_reasons[reason] += 1
        self.counters.abort_log.append((self.hooks.now(), reason, self.attempt,
                                        self.counters.full_validations, self.snapshot))
        self.read_log = ReadLog()
        self.write_buffer = {}
        self.arena = _arena.LocalArena(self.stm.config.arena_capacity)
        _sandbox.compensate_allocations(self)
        _sandbox.oob_stop(self)

    # -- sandbox surface -----------------------------------------------------

    def progress(self):
        _sandbox.tx_progress(self)

    def fault(self, site, info=None):
        """Report a would-be hardware fault; never returns."""
        if _sandbox.fault_raise(self, site, info) is Verdict.ABORT_RETRY:
            raise TxAbort(AbortReason.STALE_FAULT, site)
        raise TransactionFault(site, info)

    def alloc(self, size):
        return _sandbox.tx_alloc(self, size)

    def lookup_clone(self, fn_id, registry=None):
        return _sandbox.clone_lookup(self, self.stm.registry if registry is None else registry, fn_id)

    def suspend(self):
        _sandbox.oob_suspend(self)

    def resume(self):
        _sandbox.oob_resume(self)

    def suspended(self):
        return _sandbox.suspended(self)

    # -- arena surface -------------------------------------------------------

    def push_frame(self, n_slots):
        return _arena.push_frame(self, n_slots)

    def pop_frame(self):
        _arena.pop_frame(self)

    def store(self, raw_addr, value):
        _arena.store(self, raw_addr, value)

    def load(self, raw_addr):
        return _arena.load_raw(self, raw_addr)

    def __repr__(self):
        return (f"Transaction(tx={self.tx_id}, attempt={self.attempt}, {self.strategy.value}, "
                f"{self.status.value}, snapshot={self.snapshot}, reads={len(self.read_log)}, "
                f"writes={len(self.write_buffer)})")


@dataclass
class STMConfig:
    strategy: Strategy = Strategy.EAGER
    beacon_min_hz: float = 1.0
    beacon_max_hz: float = 100.0
    beacon_initial_hz: float = 100.0
    beacon_enabled: bool = True
    beacon_once_per_attempt: bool = False
    clean_fires_to_halve: int = 8
    helper_hz: float = None  # None: follow the beacon's maximum frequency
    alloc_budget: int = 1 << 20
    alloc_capacity: int = 256 << 20
    max_fault_retries: int = 16
    debug_validation: bool = False
    arena_capacity: int = 1 << 14

    def __post_init__(self):
        self.strategy = Strategy.parse(self.strategy)
        if not 0 < self.beacon_min_hz <= self.beacon_initial_hz <= self.beacon_max_hz:
            raise ValueError("beacon frequencies must satisfy 0 < min <= initial <= max")


class STM:
    """One shared heap plus the global clock and runtime services around it."""

    def __init__(self, size=64, *, init=None, heap=None, hooks=None, config=None,
                 registry=None, allocator=None, record=False, seqlock=None, **config_kw):
        self.heap = heap if heap is not None else SharedHeap(size, init)
        self.seqlock = seqlock if seqlock is not None else SeqLock()
        self.hooks = hooks if hooks is not None else RealHooks()
        if config is None:
            config = STMConfig(**config_kw)
        elif config_kw:
            raise TypeError("pass either config or keyword options, not both")
        self.config = config
        self.registry = registry if registry is not None else _sandbox.CloneRegistry()
        self.allocator = allocator if allocator is not None else _sandbox.Allocator(config.alloc_capacity)
        self.recorder = HistoryRecorder(self.heap) if record else None
        self.stats = Counters()
        self.commit_times = []
        self._stats_lock = threading.Lock()
        self._ids = itertools.count(1)
        self._attempts = itertools.count(1)
        self._local = threading.local()
        self._helpers = []
        self._helpers_lock = threading.Lock()
        self._closed = False

    # -- lifecycle -----------------------------------------------------------

    def close(self):
        self._closed = True
        with self._helpers_lock:
            helpers, self._helpers = self._helpers, []
        for h in helpers:
            h.shutdown_now()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def leader_context(self):
        ctx = getattr(self._local, "ctx", None)
        if ctx is None:
            ctx = self._local.ctx = _sandbox.LeaderContext(self)
        return ctx

    def _register_helper(self, helper):
        with self._helpers_lock:
            self._helpers.append(helper)

    def history(self):
        if self.recorder is None:
            raise RuntimeError("STM was created without record=True")
        return self.recorder.history()

    def _on_commit(self, tx, writes, clock):
        if writes:
            self.commit_times.append((clock, self.hooks.now()))
        if self.recorder is not None:
            self.recorder.record(tx.tx_id, tx.read_log.entries(), writes, clock)

    # -- transactions --------------------------------------------------------

    def begin(self, strategy=None, body_id=None, body=None, args=(), *,
              counters=None, sandbox=None, tx_id=None):
        """Start one attempt.  ``body``/``args`` are needed by the clone helper."""
        if getattr(self._local, "active", None) is not None:
            raise RuntimeError("nested transactions are not supported")
        strategy = self.config.strategy if strategy is None else Strategy.parse(strategy)
        self.hooks.yield_point("begin")
        snapshot = self.seqlock.wait_even(self.hooks)
        if counters is None:
            counters = Counters()
        if sandbox is None:
            sandbox = _sandbox.SandboxState.for_config(self.config, self.leader_context(), strategy)
        sandbox.reset_attempt()
        tx = Transaction(self, strategy, snapshot, counters, sandbox, next(self._attempts),
                         tx_id=next(self._ids) if tx_id is None else tx_id, body_id=body_id)
        _sandbox.oob_start(tx, strategy, body, args)
        self._local.active = tx
        return tx

    def _end(self, tx):
        if getattr(self._local, "active", None) is tx:
            self._local.active = None

    def run(self, body, *args, strategy=None, body_id=None, counters=None):
        """Retry ``body(tx, *args)`` until it commits; return its result."""
        strategy = self.config.strategy if strategy is None else Strategy.parse(strategy)
        counters = Counters() if counters is None else counters
        sandbox = _sandbox.SandboxState.for_config(self.config, self.leader_context(), strategy)
        tx_id = next(self._ids)
        try:
            while True:
                tx = self.begin(strategy, body_id, body, args, counters=counters,
                                sandbox=sandbox, tx_id=tx_id)
                try:
                    counters.body_executions += 1
                    result = body(tx, *args)
                    if tx.commit() is CommitOutcome.COMMITTED:
                        return result
                except TxAbort as e:
                    tx.sandbox.oob_suspend_depth = 0
                    if tx.status is Status.ACTIVE or tx.status is Status.DOOMED:
                        tx.abort(e.reason)
                except (TransactionFault, GuardCorruption):
                    tx.sandbox.oob_suspend_depth = 0
                    tx.abort(AbortReason.EXPLICIT)
                    raise
                except Exception as e:
                    # a body panic is a fault like any other: only a consistent one escapes
                    tx.sandbox.oob_suspend_depth = 0
                    verdict = _sandbox.fault_raise(tx, ("panic", type(e).__name__), e)
                    tx.abort(AbortReason.STALE_FAULT)
                    if verdict is Verdict.PROPAGATE_CONSISTENT:
                        raise
                except BaseException:
                    tx.sandbox.oob_suspend_depth = 0
                    tx.abort(AbortReason.EXPLICIT)
                    raise
                finally:
                    self._end(tx)
        finally:
            with self._stats_lock:
                self.stats.merge(counters)

    def read_only_snapshot(self):
        return self.heap.snapshot()
