"""Hot loops of the STM: value-based validation, write-back and history replay.

Each kernel exists twice, as a numba ``@njit`` function and as a pure numpy
function with identical semantics.  The jitted path is used when numba imports
cleanly and ``SANDSTM_DISABLE_JIT`` is unset (or ``0``); set the variable to
``1`` to force the numpy path.  ``benchmarks/bench_kernels.py`` compares both.

Read logs are ``(capacity, 2)`` uint64 arrays holding ``(addr, value)`` rows.
"""

import os

import numpy as np

WORD = np.uint64


def _want_jit():
    flag = os.environ.get("SANDSTM_DISABLE_JIT", "").strip().lower()
    return flag in ("", "0", "false", "no")


try:
    if not _want_jit():
        raise ImportError("jit disabled by SANDSTM_DISABLE_JIT")
    from numba import njit

    HAS_JIT = True
except ImportError:
    HAS_JIT = False


# -- numpy reference path ----------------------------------------------------

def first_mismatch_np(cells, log, n):
    """Index of the first log row whose cell no longer holds the logged value, or ``n``."""
    if n == 0:
        return 0
    rows = log[:n]
    bad = np.flatnonzero(cells[rows[:, 0]] != rows[:, 1])
    return int(bad[0]) if bad.size else n


def write_back_np(cells, addrs, vals):
    # addresses are unique (one entry per addr), so fancy assignment is order-free
    cells[addrs] = vals


def replay_np(state, reads, read_off, writes, write_off):
    """Replay records in order; return ``(record, read_row)`` of the first stale read or ``(-1, -1)``."""
    for r in range(read_off.size - 1):
        lo, hi = read_off[r], read_off[r + 1]
        if hi > lo:
            rows = reads[lo:hi]
            bad = np.flatnonzero(state[rows[:, 0]] != rows[:, 1])
            if bad.size:
                return r, int(lo + bad[0])
        wlo, whi = write_off[r], write_off[r + 1]
        if whi > wlo:
            state[writes[wlo:whi, 0]] = writes[wlo:whi, 1]
    return -1, -1


# -- numba path --------------------------------------------------------------

if HAS_JIT:

    @njit(cache=True, nogil=False)
    def _first_mismatch_jit(cells, log, n):
        for i in range(n):
            if cells[log[i, 0]] != log[i, 1]:
                return i
        return n

    @njit(cache=True)
    def _write_back_jit(cells, addrs, vals):
        for i in range(addrs.size):
            cells[addrs[i]] = vals[i]

    @njit(cache=True)
    def _replay_jit(state, reads, read_off, writes, write_off):
        for r in range(read_off.size - 1):
            for i in range(read_off[r], read_off[r + 1]):
                if state[reads[i, 0]] != reads[i, 1]:
                    return r, i
            for i in range(write_off[r], write_off[r + 1]):
                state[writes[i, 0]] = writes[i, 1]
        return -1, -1

    def first_mismatch(cells, log, n):
        return int(_first_mismatch_jit(cells, log, n))

    def write_back(cells, addrs, vals):
        _write_back_jit(cells, addrs, vals)

    def replay(state, reads, read_off, writes, write_off):
        r, i = _replay_jit(state, reads, read_off, writes, write_off)
        return int(r), int(i)

else:
    first_mismatch = first_mismatch_np
    write_back = write_back_np
    replay = replay_np


def backend():
    return "numba" if HAS_JIT else "numpy"


def warm_up():
    """Compile (or load from cache) every kernel so that timing runs exclude it."""
    cells = np.zeros(4, dtype=WORD)
    log = np.zeros((2, 2), dtype=WORD)
    first_mismatch(cells, log, 2)
    write_back(cells, np.zeros(1, dtype=np.int64), np.zeros(1, dtype=WORD))
    off = np.zeros(2, dtype=np.int64)
    replay(cells.copy(), log, off, log, off)
