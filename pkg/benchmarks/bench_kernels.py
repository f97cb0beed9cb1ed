"""Compare the numba kernels with their numpy fallbacks.

Both backends live side by side in sandstm._kernels; SANDSTM_DISABLE_JIT=1
only changes which one the package binds.  This script times each pair
directly on the same inputs and checks they agree.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from sandstm import _kernels as k


def make_inputs(rng, heap_size, log_len, n_records=64):
    cells = rng.integers(0, 1 << 20, heap_size, dtype=np.uint64)
    addrs = rng.integers(0, heap_size, log_len)
    log = np.stack([addrs.astype(np.uint64), cells[addrs]], axis=1)
    # a committed history: each record reads then writes a few cells
    reads, writes = [], []
    state = cells.copy()
    read_off, write_off = [0], [0]
    for _ in range(n_records):
        ra = rng.integers(0, heap_size, 8)
        reads += [(a, state[a]) for a in ra]
        wa = rng.integers(0, heap_size, 4)
        wv = rng.integers(0, 1 << 20, 4, dtype=np.uint64)
        for a, v in zip(wa, wv):
            writes.append((a, v))
            state[a] = v
        read_off.append(len(reads))
        write_off.append(len(writes))
    hist = (np.array(reads, dtype=np.uint64), np.array(read_off, dtype=np.int64),
            np.array(writes, dtype=np.uint64), np.array(write_off, dtype=np.int64))
    return cells, log, hist


def bench(label, jit_fn, np_fn, args_fn, repeat):
    t_jit = min(timeit.repeat(lambda: jit_fn(*args_fn()), number=1, repeat=repeat))
    t_np = min(timeit.repeat(lambda: np_fn(*args_fn()), number=1, repeat=repeat))
    print(f"{label:<28} numba {t_jit * 1e6:9.1f} us   numpy {t_np * 1e6:9.1f} us   "
          f"ratio {t_np / t_jit:6.1f}x")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    if not k.HAS_JIT:
        raise SystemExit("numba kernels disabled (SANDSTM_DISABLE_JIT is set)")
    k.warm_up()
    rng = np.random.default_rng(0)
    for log_len in (8, 64, 1024, 16384):
        cells, log, _ = make_inputs(rng, 4096, log_len)
        assert k._first_mismatch_jit(cells, log, log_len) == k.first_mismatch_np(cells, log, log_len)
        bench(f"validate, {log_len} entries", k._first_mismatch_jit, k.first_mismatch_np,
              lambda: (cells, log, log_len), args.repeat)
    for n in (4, 64, 1024):
        cells = np.zeros(4096, dtype=np.uint64)
        addrs = rng.integers(0, 4096, n)
        vals = rng.integers(0, 1 << 20, n, dtype=np.uint64)
        bench(f"write-back, {n} words", k._write_back_jit, k.write_back_np,
              lambda: (cells, addrs, vals), args.repeat)
    for n_records in (8, 64, 512):
        cells, _, (reads, roff, writes, woff) = make_inputs(rng, 256, 8, n_records)
        a, b = cells.copy(), cells.copy()
        assert tuple(k._replay_jit(a, reads, roff, writes, woff)) == k.replay_np(b, reads, roff, writes, woff)
        assert np.array_equal(a, b)
        bench(f"replay, {n_records} records", k._replay_jit, k.replay_np,
              lambda: (cells.copy(), reads, roff, writes, woff), args.repeat)


if __name__ == "__main__":
    main()
