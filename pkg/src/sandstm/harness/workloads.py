"""Desk-scale workload kernels standing in for the STAMP applications.

Each kernel declares the characteristic buckets of the STAMP application it
imitates and can measure its own: transaction length in TM API calls per
attempt, read/write-set size per committed transaction, the share of work
done inside transactions, and aborts per commit.
"""

import enum
import random
from collections import Counter
from dataclasses import dataclass

from .._types import Strategy
from ..core import STM
from ..sched import DeterministicScheduler, RandomChooser


class Level(enum.Enum):
    SHORT = "Short"
    MEDIUM = "Medium"
    LONG = "Long"
    SMALL = "Small"
    LARGE = "Large"
    LOW = "Low"
    HIGH = "High"


# lower bounds of the upper two buckets, per characteristic
TX_LENGTH_CUTS = (64, 512)  # TM API calls per attempt
RW_SET_CUTS = (8, 64)  # distinct cells read plus distinct cells written
TX_TIME_CUTS = (0.4, 0.8)  # share of work units spent inside transactions
CONTENTION_CUTS = (0.1, 0.5)  # aborts per commit


def _bucket(value, cuts, names):
    lo, hi = cuts
    return names[0] if value < lo else names[1] if value < hi else names[2]


@dataclass(frozen=True)
class Buckets:
    tx_length: Level
    rw_set: Level
    tx_time: Level
    contention: Level

    def as_dict(self):
        return {k: v.value for k, v in self.__dict__.items()}


@dataclass(frozen=True)
class Characteristics:
    tx_length: float
    rw_set: float
    tx_time: float
    contention: float

    def buckets(self):
        return Buckets(
            _bucket(self.tx_length, TX_LENGTH_CUTS, (Level.SHORT, Level.MEDIUM, Level.LONG)),
            _bucket(self.rw_set, RW_SET_CUTS, (Level.SMALL, Level.MEDIUM, Level.LARGE)),
            _bucket(self.tx_time, TX_TIME_CUTS, (Level.LOW, Level.MEDIUM, Level.HIGH)),
            _bucket(self.contention, CONTENTION_CUTS, (Level.LOW, Level.MEDIUM, Level.HIGH)),
        )


class CorrectnessFailure(AssertionError):
    """A kernel's end state contradicts the operations that committed."""


def busy(hooks, units):
    """Non-transactional work: one scheduling step per unit, or a short spin in real time."""
    if getattr(hooks, "deterministic", False):
        for _ in range(units):
            hooks.yield_point("work")
        return 0
    x = 0
    for i in range(units * 16):
        x = (x * 1103515245 + i) & 0xFFFF
    return x


class Workload:
    name = ""
    analog = ""  # the STAMP application this kernel imitates
    declared = None
    defaults = {}

    def __init__(self, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise TypeError(f"{self.name}: unknown parameter(s) {sorted(unknown)}")
        self.params = {**self.defaults, **params}
        for k, v in self.params.items():
            setattr(self, k, v)

    # a kernel provides these
    def initial(self):
        raise NotImplementedError

    def make_ops(self, threads, rng):
        raise NotImplementedError

    def outside_units(self, op):
        raise NotImplementedError

    def body(self, tx, op):
        raise NotImplementedError

    def check(self, heap, ops, results):
        """Return a list of problems with the end state (empty when correct)."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.params})"


class CounterArray(Workload):
    """Independent increments of random counters (ssca2-like)."""

    name = "counter-array"
    analog = "ssca2"
    declared = Buckets(Level.SHORT, Level.SMALL, Level.LOW, Level.LOW)
    defaults = {"counters": 256, "ops_per_thread": 64, "outside": 24}

    def initial(self):
        return [0] * self.counters

    def make_ops(self, threads, rng):
        return [[rng.randrange(self.counters) for _ in range(self.ops_per_thread)]
                for _ in range(threads)]

    def outside_units(self, op):
        return self.outside

    def body(self, tx, i):
        v = tx.read(i)
        tx.write(i, v + 1)
        return v

    def check(self, heap, ops, results):
        want = Counter(i for thread in ops for i in thread)
        return [f"counter {i} = {heap[i]}, {want[i]} increments committed"
                for i in range(self.counters) if heap[i] != want[i]]


class KVIndex(Workload):
    """Accumulate points into cluster sums and counts (kmeans-like).

    The nearest-cluster search runs outside the transaction against fixed
    centres, as kmeans does; the transaction only updates one cluster.
    """

    name = "kv-index"
    analog = "kmeans"
    declared = Buckets(Level.SHORT, Level.MEDIUM, Level.LOW, Level.LOW)
    defaults = {"clusters": 16, "dims": 8, "ops_per_thread": 32}

    def initial(self):
        return [0] * (self.clusters * (self.dims + 1))

    def make_ops(self, threads, rng):
        return [[(rng.randrange(self.clusters), tuple(rng.randrange(100) for _ in range(self.dims)))
                 for _ in range(self.ops_per_thread)] for _ in range(threads)]

    def outside_units(self, op):
        return self.clusters * self.dims

    def body(self, tx, op):
        c, point = op
        base = c * (self.dims + 1)
        for d, x in enumerate(point):
            tx.write(base + d, tx.read(base + d) + x)
        n = tx.read(base + self.dims)
        tx.write(base + self.dims, n + 1)
        return n

    def check(self, heap, ops, results):
        sums = [[0] * (self.dims + 1) for _ in range(self.clusters)]
        for thread in ops:
            for c, point in thread:
                for d, x in enumerate(point):
                    sums[c][d] += x
                sums[c][self.dims] += 1
        problems = []
        for c in range(self.clusters):
            base = c * (self.dims + 1)
            got = [int(heap[base + d]) for d in range(self.dims + 1)]
            if got != sums[c]:
                problems.append(f"cluster {c} holds {got}, expected {sums[c]}")
        return problems


NIL = 0


class ListSet(Workload):
    """Sorted linked-list set with insert/remove traffic (intruder-like).

    Node ``j`` occupies cells ``2j`` (key) and ``2j + 1`` (next); node 0 is
    the head sentinel and ``next == 0`` ends the list.  Every thread draws
    fresh nodes from its own pool, so allocation never conflicts.  Like the
    packet queue in intruder, every operation first takes a ticket from one
    shared counter (the last cell), which is where most conflicts come from.
    """

    name = "list-set"
    analog = "intruder"
    declared = Buckets(Level.SHORT, Level.MEDIUM, Level.MEDIUM, Level.HIGH)
    defaults = {"key_range": 32, "initial_keys": 16, "ops_per_thread": 32, "outside": 36,
                "max_threads": 8}

    def _pool_base(self, thread):
        return 1 + self.initial_keys + thread * self.ops_per_thread

    @property
    def queue(self):
        return 2 * (1 + self.initial_keys + self.max_threads * self.ops_per_thread)

    def initial(self):
        cells = [0] * (self.queue + 1)
        keys = self._initial_keys()
        prev = 0
        for j, k in enumerate(keys, start=1):
            cells[2 * j] = k
            cells[2 * prev + 1] = j
            prev = j
        return cells

    def _initial_keys(self):
        step = self.key_range / self.initial_keys
        return sorted({1 + int(i * step) for i in range(self.initial_keys)})

    def make_ops(self, threads, rng):
        if threads > self.max_threads:
            raise ValueError(f"list-set is laid out for at most {self.max_threads} threads")
        ops = []
        for t in range(threads):
            mine = []
            for j in range(self.ops_per_thread):
                kind = "insert" if rng.random() < 0.5 else "remove"
                mine.append((kind, 1 + rng.randrange(self.key_range), self._pool_base(t) + j))
            ops.append(mine)
        return ops

    def outside_units(self, op):
        return self.outside

    def body(self, tx, op):
        kind, key, node = op
        tx.write(self.queue, tx.read(self.queue) + 1)
        prev = 0
        cur = tx.read(1)
        while cur != NIL:
            k = tx.read(2 * cur)
            if k >= key:
                break
            prev = cur
            cur = tx.read(2 * cur + 1)
        present = cur != NIL and tx.read(2 * cur) == key
        if kind == "insert":
            if present:
                return False
            tx.write(2 * node, key)
            tx.write(2 * node + 1, cur)
            tx.write(2 * prev + 1, node)
            return True
        if not present:
            return False
        tx.write(2 * prev + 1, tx.read(2 * cur + 1))
        return True

    def contents(self, heap):
        keys = []
        cur = int(heap[1])
        seen = set()
        while cur != NIL:
            if cur in seen:
                raise CorrectnessFailure("list-set contains a cycle")
            seen.add(cur)
            keys.append(int(heap[2 * cur]))
            cur = int(heap[2 * cur + 1])
        return keys

    def check(self, heap, ops, results):
        try:
            keys = self.contents(heap)
        except CorrectnessFailure as e:
            return [str(e)]
        problems = []
        issued = sum(len(t) for t in ops)
        if heap[self.queue] != issued:
            problems.append(f"queue counter {int(heap[self.queue])}, {issued} operations committed")
        if keys != sorted(set(keys)):
            problems.append(f"list is not strictly sorted: {keys}")
        balance = Counter({k: 1 for k in self._initial_keys()})
        for thread_ops, thread_res in zip(ops, results):
            for (kind, key, _), ok in zip(thread_ops, thread_res):
                if ok:
                    balance[key] += 1 if kind == "insert" else -1
        for key in range(1, self.key_range + 1):
            want = balance[key]
            if want not in (0, 1):
                problems.append(f"key {key}: successful inserts minus removes is {want}")
            elif (key in keys) != bool(want):
                problems.append(f"key {key} present={key in keys}, expected {bool(want)}")
        return problems


class GridRouter(Workload):
    """Route paths through a shared grid with BFS in the transaction's own frame (labyrinth-like).

    The transaction reads the whole grid, runs a breadth-first search over
    frame words addressed by computed indices, and claims the path's cells.
    """

    name = "grid-router"
    analog = "labyrinth"
    declared = Buckets(Level.LONG, Level.LARGE, Level.HIGH, Level.HIGH)
    defaults = {"width": 14, "height": 14, "ops_per_thread": 3, "outside": 8}

    def initial(self):
        return [0] * (self.width * self.height)

    def make_ops(self, threads, rng):
        cells = self.width * self.height
        ops = []
        for t in range(threads):
            mine = []
            for j in range(self.ops_per_thread):
                src, dst = rng.sample(range(cells), 2)
                mine.append((1 + t * self.ops_per_thread + j, src, dst))
            ops.append(mine)
        return ops

    def outside_units(self, op):
        return self.outside

    def _neighbours(self, c):
        w, h = self.width, self.height
        x, y = c % w, c // w
        if x > 0:
            yield c - 1
        if x < w - 1:
            yield c + 1
        if y > 0:
            yield c - w
        if y < h - 1:
            yield c + w

    def body(self, tx, op):
        route, src, dst = op
        n = self.width * self.height
        grid = [tx.read(c) for c in range(n)]
        if grid[src] or grid[dst]:
            return None
        dist = tx.push_frame(n)  # 0 = unvisited, else BFS depth + 1
        queue = tx.push_frame(n)
        tx.store(dist.addr(src), 1)
        tx.store(queue.addr(0), src)
        head, tail = 0, 1
        found = False
        while head < tail and not found:
            c = tx.load(queue.addr(head))
            head += 1
            d = tx.load(dist.addr(c))
            for nb in self._neighbours(c):
                if grid[nb] or tx.load(dist.addr(nb)):
                    continue
                tx.store(dist.addr(nb), d + 1)
                tx.store(queue.addr(tail), nb)
                tail += 1
                if nb == dst:
                    found = True
                    break
        path = None
        if found:
            path = [dst]
            c = dst
            while c != src:
                d = tx.load(dist.addr(c))
                c = next(nb for nb in self._neighbours(c) if tx.load(dist.addr(nb)) == d - 1)
                path.append(c)
            path.reverse()
        tx.pop_frame()
        tx.pop_frame()
        if path is None:
            return None
        for c in path:
            tx.write(c, route)
        return tuple(path)

    def check(self, heap, ops, results):
        problems = []
        owned = Counter(int(v) for v in heap if v)
        routed = {}
        for thread_ops, thread_res in zip(ops, results):
            for (route, src, dst), path in zip(thread_ops, thread_res):
                if path is None:
                    continue
                routed[route] = path
                if path[0] != src or path[-1] != dst:
                    problems.append(f"route {route} does not join {src} to {dst}")
                for a, b in zip(path, path[1:]):
                    if b not in set(self._neighbours(a)):
                        problems.append(f"route {route} jumps from {a} to {b}")
                for c in path:
                    if heap[c] != route:
                        problems.append(f"cell {c} of route {route} holds {int(heap[c])}")
                if owned[route] != len(path):
                    problems.append(f"route {route} owns {owned[route]} cells, path has {len(path)}")
        stray = set(owned) - set(routed)
        if stray:
            problems.append(f"cells owned by routes that never committed: {sorted(stray)}")
        return problems


WORKLOADS = {w.name: w for w in (CounterArray, KVIndex, ListSet, GridRouter)}


def make_workload(name, **params):
    try:
        return WORKLOADS[name](**params)
    except KeyError:
        raise ValueError(f"unknown workload {name!r}; choose from {', '.join(WORKLOADS)}") from None


def drive(stm, workload, ops, strategy, spawn):
    """Run each thread's op list through ``stm``; returns per-thread result lists.

    ``spawn(fn)`` starts one thread of execution and returns a joinable handle
    (or None when the caller drives the threads itself).
    """
    results = [[] for _ in ops]

    def thread_main(t):
        out = results[t]
        for op in ops[t]:
            busy(stm.hooks, workload.outside_units(op))
            out.append(stm.run(workload.body, op, strategy=strategy))

    handles = [spawn(thread_main, t) for t in range(len(ops))]
    return results, handles


@dataclass
class SelfCheck:
    workload: str
    analog: str
    measured: Characteristics
    measured_buckets: Buckets
    declared: Buckets
    problems: list

    @property
    def ok(self):
        return self.measured_buckets == self.declared and not self.problems


def self_check(name, threads=4, seed=0, strategy=Strategy.EAGER, **params):
    """Measure a kernel's characteristics under the seeded deterministic scheduler."""
    workload = make_workload(name, **params)
    sched = DeterministicScheduler(RandomChooser(seed), max_steps=10_000_000)
    init = workload.initial()
    stm = STM(len(init), init=init, hooks=sched, record=True, strategy=strategy)
    ops = workload.make_ops(threads, random.Random(seed))
    results, _ = drive(stm, workload, ops, strategy,
                       lambda fn, t: sched.spawn(fn, t, name=f"worker{t}"))
    try:
        sched.run()
    finally:
        stm.close()
    problems = workload.check(stm.heap.cells, ops, results)
    st = stm.stats
    history = stm.history()
    rw = [len({a for a, _ in r.reads}) + len({a for a, _ in r.writes}) for r in history.commits]
    outside = sum(workload.outside_units(op) for thread in ops for op in thread)
    measured = Characteristics(
        tx_length=st.tm_ops / max(st.body_executions, 1),
        rw_set=sum(rw) / max(len(rw), 1),
        tx_time=st.tm_ops / max(st.tm_ops + outside, 1),
        contention=st.aborts / max(st.commits, 1),
    )
    return SelfCheck(name, workload.analog, measured, measured.buckets(), workload.declared,
                     problems)


__all__ = ["Buckets", "Characteristics", "CorrectnessFailure", "CounterArray", "GridRouter",
           "KVIndex", "Level", "ListSet", "SelfCheck", "WORKLOADS", "Workload", "busy", "drive",
           "make_workload", "self_check"]
