"""Yield-point hooks and the deterministic scheduler.

Every TM API entry calls ``hooks.yield_point(label)``.  With :class:`RealHooks`
that is a no-op and threads run freely.  With :class:`DeterministicScheduler`
each participating thread is a :class:`Task`; only one task runs at a time and
control changes hands only at yield points, so an interleaving is fully
determined by the sequence of choices the :class:`Chooser` makes.

Blocking inside the STM (helpers idling, the stop handshake, spin-waits) goes
through ``hooks.wait_until`` so that under the scheduler a blocked task is
simply not a candidate until its predicate holds.
"""

import random
import threading
import time

from .errors import Deadlock, Livelock, SchedulerError


class RealHooks:
    """Production hooks: free-running threads, wall-clock time."""

    deterministic = False

    def __init__(self, poll=0.0002):
        self.poll = poll

    def yield_point(self, label, spin=False):
        if spin:
            time.sleep(0)

    def now(self):
        return time.monotonic()

    def wait_until(self, pred, timeout=None, label="wait"):
        if pred():
            return True
        deadline = None if timeout is None else time.monotonic() + timeout
        delay = self.poll / 8
        while not pred():
            if deadline is not None and time.monotonic() >= deadline:
                return pred()
            time.sleep(delay)
            delay = min(delay * 2, self.poll)
        return True

    def sleep(self, seconds):
        time.sleep(seconds)

    def spawn(self, fn, *args, name=None, daemon=True):
        t = threading.Thread(target=fn, args=args, name=name, daemon=daemon)
        t.start()
        return t


class _Killed(BaseException):
    """Unwinds a parked task when the scheduler shuts it down."""


class Task:
    def __init__(self, sched, fn, args, name, daemon):
        self.sched = sched
        self.fn = fn
        self.args = args
        self.name = name
        self.daemon = daemon
        self.go = threading.Semaphore(0)
        self.done = False
        self.exc = None
        self.result = None
        self.pred = None
        self.deadline = None
        self.spinning = False
        self.label = "start"
        self.steps = 0
        self.thread = threading.Thread(target=self._main, name=name, daemon=True)

    def _main(self):
        self.go.acquire()
        self.sched._local.task = self
        try:
            if not self.sched._killing:
                self.result = self.fn(*self.args)
        except _Killed:
            pass
        except BaseException as e:  # surfaced by DeterministicScheduler.run
            self.exc = e
        finally:
            self.done = True
            self.sched._back.release()

    def runnable(self, now):
        if self.pred is None:
            return True
        if self.deadline is not None and now >= self.deadline:
            return True
        return bool(self.pred())

    def __repr__(self):
        return f"Task({self.name!r}, label={self.label!r}, done={self.done})"


class Chooser:
    """Picks the next task among the candidates at a scheduling decision."""

    def choose(self, sched, candidates):
        return candidates[0]


class FirstChooser(Chooser):
    """Always the earliest-spawned candidate: run-to-block, then hand over."""


class RandomChooser(Chooser):
    """Seeded uniform choice; ``stickiness`` keeps the last task with that probability."""

    def __init__(self, seed=0, stickiness=0.0):
        self.rng = random.Random(seed)
        self.stickiness = stickiness

    def choose(self, sched, candidates):
        last = sched.last_task
        if last in candidates and self.stickiness and self.rng.random() < self.stickiness:
            return last
        return candidates[self.rng.randrange(len(candidates))]


class DeterministicScheduler:
    """Serializes tasks onto one logical timeline with virtual time.

    Each resumed step advances virtual time by ``tick`` seconds.  A task that
    yields with ``spin=True`` (a busy loop with no progress of its own) is only
    chosen when no non-spinning task can run.  Labels in ``atomic_labels`` are
    not preemption points.
    """

    deterministic = True

    def __init__(self, chooser=None, tick=0.001, max_steps=200_000,
                 atomic_labels=frozenset({"validate.mid"}), trace=False):
        self.chooser = chooser or FirstChooser()
        self.tick = tick
        self.max_steps = max_steps
        self.atomic_labels = frozenset(atomic_labels)
        self.tasks = []
        self.steps = 0
        self.decisions = 0
        self.vtime = 0.0
        self.last_task = None
        self.trace = [] if trace else None
        self._back = threading.Semaphore(0)
        self._local = threading.local()
        self._killing = False
        self._running = False

    # -- hooks interface -----------------------------------------------------

    def current(self):
        return getattr(self._local, "task", None)

    def now(self):
        return self.vtime

    def yield_point(self, label, spin=False):
        task = self.current()
        if task is None or label in self.atomic_labels:
            return
        self._park(task, label, spin=spin)

    def wait_until(self, pred, timeout=None, label="wait"):
        if pred():
            return True
        task = self.current()
        if task is None:
            raise SchedulerError(f"blocking wait {label!r} outside a scheduled task")
        deadline = None if timeout is None else self.vtime + timeout
        while not pred():
            if deadline is not None and self.vtime >= deadline:
                return pred()
            self._park(task, label, pred=pred, deadline=deadline)
        return True

    def sleep(self, seconds):
        task = self.current()
        if task is None:
            raise SchedulerError("sleep outside a scheduled task")
        deadline = self.vtime + seconds
        self.wait_until(lambda: self.vtime >= deadline, timeout=seconds, label="sleep")

    def spawn(self, fn, *args, name=None, daemon=False):
        task = Task(self, fn, args, name or f"task{len(self.tasks)}", daemon)
        self.tasks.append(task)
        task.thread.start()
        return task

    # -- driver --------------------------------------------------------------

    def _park(self, task, label, spin=False, pred=None, deadline=None):
        task.label = label
        task.spinning = spin
        task.pred = pred
        task.deadline = deadline
        self._back.release()
        task.go.acquire()
        task.pred = None
        task.deadline = None
        if self._killing:
            raise _Killed()

    def _resume(self, task):
        task.steps += 1
        task.go.release()
        self._back.acquire()

    def _kill_all(self):
        self._killing = True
        for t in self.tasks:
            if not t.done:
                t.go.release()
                self._back.acquire()
        for t in self.tasks:
            t.thread.join()

    def run(self):
        """Drive every task to completion; daemon tasks are killed once the rest finish."""
        if self._running:
            raise SchedulerError("scheduler already running")
        self._running = True
        try:
            self._loop()
        finally:
            self._kill_all()
            self._running = False
        failed = [t for t in self.tasks if t.exc is not None]
        if failed:
            raise failed[0].exc

    def _loop(self):
        while True:
            live = [t for t in self.tasks if not t.done]
            if any(t.exc is not None for t in self.tasks):
                return
            if not any(not t.daemon for t in live):
                return
            now = self.vtime
            ready = [t for t in live if t.runnable(now)]
            if not ready:
                waits = [t.deadline for t in live if t.deadline is not None]
                if waits:
                    self.vtime = max(self.vtime, min(waits))
                    continue
                raise Deadlock("no runnable task: " + ", ".join(repr(t) for t in live))
            candidates = [t for t in ready if not t.spinning] or ready
            if len(candidates) > 1:
                self.decisions += 1
                task = self.chooser.choose(self, candidates)
            else:
                task = candidates[0]
            self.steps += 1
            if self.steps > self.max_steps:
                raise Livelock(f"exceeded {self.max_steps} steps; last={task!r}")
            if self.trace is not None:
                self.trace.append((task.name, task.label))
            self.vtime += self.tick
            self.last_task = task
            self._resume(task)

    def run_tasks(self, *fns, names=None):
        """Spawn one non-daemon task per callable, run, and return their results."""
        tasks = [self.spawn(fn, name=None if names is None else names[i])
                 for i, fn in enumerate(fns)]
        self.run()
        return [t.result for t in tasks]
