"""Transaction-local frames bracketed by guard slots.

Each frame is laid out as ``[guard_lo x2][slots x n][guard_hi x2]`` in one
contiguous word array.  The two guard words stand for the saved base pointer
and the return address.  Raw addresses are plain integers:

* ``[0, heap.size)`` are shared heap cells,
* ``[ARENA_BASE, ARENA_BASE + arena.top)`` are the attempt's own arena words,
* everything else is unmapped.

Fixed-offset slot access (``frame[i]``) needs no checks at all; a store
through a computed address is classified first, and a guard hit aborts without
validating the read set.
"""

import numpy as np

from ._types import WriteClass
from .errors import AbortReason, GuardCorruption, TransactionFault, TxAbort

GUARD_WORDS = 2
SENTINEL = 0xDEADBEEFCAFEF00D
ARENA_BASE = 1 << 48


class Frame:
    __slots__ = ("arena", "lo", "base", "n_slots")

    def __init__(self, arena, lo, n_slots):
        self.arena = arena
        self.lo = lo
        self.base = lo + GUARD_WORDS
        self.n_slots = n_slots

    @property
    def hi(self):
        return self.base + self.n_slots + GUARD_WORDS

    def addr(self, index):
        """Raw address of slot ``index`` (no bounds check: that is the point)."""
        return ARENA_BASE + self.base + index

    def __getitem__(self, index):
        if not 0 <= index < self.n_slots:
            raise IndexError(index)
        return int(self.arena.words[self.base + index])

    def __setitem__(self, index, value):
        if not 0 <= index < self.n_slots:
            raise IndexError(index)
        self.arena.words[self.base + index] = value & 0xFFFFFFFFFFFFFFFF

    def __len__(self):
        return self.n_slots

    def guards_intact(self):
        w = self.arena.words
        lo = w[self.lo: self.base]
        hi = w[self.base + self.n_slots: self.hi]
        return bool(np.all(lo == SENTINEL) and np.all(hi == SENTINEL))


class CapacityExceeded(Exception):
    pass


class LocalArena:
    def __init__(self, capacity=1 << 14):
        self.capacity = capacity
        self.words = np.zeros(min(capacity, 256), dtype=np.uint64)
        self.frames = []
        self.top = 0

    def push(self, n_slots):
        if n_slots < 0:
            raise ValueError("negative frame size")
        need = n_slots + 2 * GUARD_WORDS
        if self.top + need > self.capacity:
            raise CapacityExceeded(self.top + need)
        if self.top + need > self.words.size:
            grown = np.zeros(min(self.capacity, max(2 * self.words.size, self.top + need)),
                             dtype=np.uint64)
            grown[: self.top] = self.words[: self.top]
            self.words = grown
        frame = Frame(self, self.top, n_slots)
        w = self.words
        w[frame.lo: frame.base] = SENTINEL
        w[frame.base: frame.base + n_slots] = 0
        w[frame.base + n_slots: frame.hi] = SENTINEL
        self.top = frame.hi
        self.frames.append(frame)
        return frame

    def pop(self):
        if not self.frames:
            raise IndexError("pop from empty arena")
        frame = self.frames[-1]
        if not frame.guards_intact():
            raise GuardCorruption(f"guard words of frame at {frame.lo} were overwritten")
        self.frames.pop()
        self.top = frame.lo

    def is_guard(self, offset):
        for frame in reversed(self.frames):
            if offset >= frame.lo:
                return offset < frame.base or offset >= frame.base + frame.n_slots
        raise ValueError(offset)

    def _poke_guard(self, frame, which="hi", value=0):
        """Test backdoor: overwrite a guard word without classification."""
        off = frame.lo if which == "lo" else frame.base + frame.n_slots + 1
        self.words[off] = value

    def __len__(self):
        return len(self.frames)


def classify(tx, raw_addr):
    heap = tx.heap
    if 0 <= raw_addr < heap.size:
        return WriteClass.SHARED if heap.mapped[raw_addr] else WriteClass.UNMAPPED
    arena = tx.arena
    off = raw_addr - ARENA_BASE
    if 0 <= off < arena.top:
        return WriteClass.GUARD if arena.is_guard(off) else WriteClass.LOCAL
    return WriteClass.UNMAPPED


def _guard_hit(tx, raw_addr):
    if tx.is_clone:
        from .sandbox import _clone_hazard
        _clone_hazard(tx)
    raise TxAbort(AbortReason.GUARD, raw_addr)


def push_frame(tx, n_slots):
    try:
        return tx.arena.push(n_slots)
    except CapacityExceeded:
        # exhaustion from an inconsistent size aborts; on a valid state it is a real overflow
        if not tx.validate():
            raise TxAbort(AbortReason.VALIDATION if tx.is_clone else AbortReason.CAPACITY) from None
        raise TransactionFault(("arena", "capacity"), f"frame of {n_slots} slots") from None


def pop_frame(tx):
    tx.arena.pop()


def store(tx, raw_addr, value):
    tx._enter("store")
    cls = classify(tx, raw_addr)
    if cls is WriteClass.LOCAL:
        tx.arena.words[raw_addr - ARENA_BASE] = value & 0xFFFFFFFFFFFFFFFF
    elif cls is WriteClass.GUARD:
        _guard_hit(tx, raw_addr)
    elif cls is WriteClass.SHARED:
        tx._buffer(raw_addr, value)
    else:
        tx.fault(("store", raw_addr), "unmapped address")


def load(tx, frame, index):
    return frame[index]


def load_raw(tx, raw_addr):
    tx._enter("load")
    cls = classify(tx, raw_addr)
    if cls is WriteClass.LOCAL:
        return int(tx.arena.words[raw_addr - ARENA_BASE])
    if cls is WriteClass.GUARD:
        _guard_hit(tx, raw_addr)
    if cls is WriteClass.SHARED:
        buffered = tx.write_buffer.get(raw_addr)
        return buffered if buffered is not None else tx._load(raw_addr)
    return tx.fault(("load", raw_addr), "unmapped address")
