"""Commit histories: what the STM records and what the oracle consumes."""

import json
import threading
from dataclasses import dataclass, field


@dataclass(frozen=True)
class CommitRecord:
    tx: int
    reads: tuple  # ((addr, value), ...) in read order
    writes: tuple  # ((addr, value), ...) in write-back order
    clock: int  # state version the commit produced (writers) or validated against (readers)

    @property
    def writer(self):
        return bool(self.writes)

    def to_json(self):
        return {"tx": self.tx, "reads": [list(r) for r in self.reads],
                "writes": [list(w) for w in self.writes], "clock": self.clock}

    @classmethod
    def from_json(cls, obj):
        return cls(int(obj["tx"]), tuple((int(a), int(v)) for a, v in obj.get("reads", ())),
                   tuple((int(a), int(v)) for a, v in obj.get("writes", ())), int(obj["clock"]))


def _order_key(rec):
    # a reader validated at version c comes after the writer that produced c
    return (rec.clock, 1 if not rec.writer else 0)


@dataclass
class History:
    initial: list
    commits: list = field(default_factory=list)
    final: list = field(default_factory=list)

    def to_json(self):
        return {"initial": list(self.initial), "commits": [c.to_json() for c in self.commits],
                "final": list(self.final)}

    def dumps(self, **kw):
        return json.dumps(self.to_json(), **kw)

    @classmethod
    def from_json(cls, obj):
        return cls([int(x) for x in obj["initial"]],
                   [CommitRecord.from_json(c) for c in obj.get("commits", ())],
                   [int(x) for x in obj["final"]])

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)


class HistoryRecorder:
    """Commit-time hook collecting one record per committed transaction."""

    def __init__(self, heap):
        self.heap = heap
        self.initial = heap.snapshot()
        self._records = []
        self._lock = threading.Lock()

    def record(self, tx_id, reads, writes, clock):
        rec = CommitRecord(tx_id, tuple(reads), tuple(writes), clock)
        with self._lock:
            self._records.append(rec)

    def history(self):
        with self._lock:
            records = sorted(self._records, key=_order_key)
        return History(list(self.initial), records, self.heap.snapshot())
