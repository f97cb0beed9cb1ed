"""Word-based software transactional memory with deferred updates and sandboxed lazy validation."""

from ._kernels import backend
from ._types import CommitOutcome, LAZY_STRATEGIES, Mode, Status, Strategy, Verdict, WriteClass
from .arena import ARENA_BASE, GUARD_WORDS, SENTINEL, LocalArena
from .core import STM, Counters, ReadLog, SeqLock, SharedHeap, STMConfig, Transaction
from .errors import (AbortReason, CloneLookupError, Deadlock, ExplorationBoundExceeded,
                     GuardCorruption, HelperAttachError, Livelock, TransactionFault, TxAbort)
from .history import CommitRecord, History
from .sandbox import Allocator, Beacon, Block, CloneRegistry, SandboxState
from .sched import DeterministicScheduler, FirstChooser, RandomChooser, RealHooks

__version__ = "0.1.0"

__all__ = [
    "ARENA_BASE", "AbortReason", "Allocator", "Beacon", "Block", "CloneLookupError",
    "CloneRegistry", "CommitOutcome", "CommitRecord", "Counters", "Deadlock",
    "DeterministicScheduler", "ExplorationBoundExceeded", "FirstChooser", "GUARD_WORDS",
    "GuardCorruption", "HelperAttachError", "History", "LAZY_STRATEGIES", "Livelock",
    "LocalArena", "Mode", "RandomChooser", "ReadLog", "RealHooks", "SENTINEL", "STM",
    "STMConfig", "SandboxState", "SeqLock", "SharedHeap", "Status", "Strategy",
    "Transaction", "TransactionFault", "TxAbort", "Verdict", "WriteClass", "backend",
]
