"""Exceptions shared across the package."""

import enum


class AbortReason(enum.Enum):
    VALIDATION = "validation"  # read set failed value-based validation
    DOOMED = "doomed"  # doom flag delivered by a helper
    BEACON = "beacon"  # timer-driven validation found the read set stale
    GUARD = "guard"  # computed address hit a frame guard slot
    CLONE_MISS = "clone-miss"  # no transactional clone for a function id
    STALE_FAULT = "stale-fault"  # fault raised while the clock had moved
    BUDGET = "budget"  # over-budget allocation failed pre-validation
    CAPACITY = "capacity"  # arena capacity exceeded on an invalid state
    EXPLICIT = "explicit"


class TxAbort(Exception):
    """Abort signal: unwinds the body so the retry loop can re-execute it.

    This is control flow, not a failure.  Bodies must let it propagate.
    """

    def __init__(self, reason, detail=None):
        super().__init__(reason.value if detail is None else f"{reason.value}: {detail}")
        self.reason = reason
        self.detail = detail


class TransactionFault(Exception):
    """A fault raised inside a transaction that ran on a consistent state.

    Only surfaced when the fault verdict is ``PropagateConsistent``; it is an
    application error, not a symptom of a doomed transaction.
    """

    def __init__(self, site, info=None):
        super().__init__(f"fault at {site!r}: {info!r}")
        self.site = site
        self.info = info


class CloneLookupError(TransactionFault):
    """Debug-mode diagnostic: clone lookup missed although the read set is valid."""


class HelperAttachError(RuntimeError):
    pass


class GuardCorruption(AssertionError):
    """A frame guard changed without going through classification (internal bug)."""


class SchedulerError(RuntimeError):
    pass


class Deadlock(SchedulerError):
    pass


class Livelock(SchedulerError):
    pass


class ExplorationBoundExceeded(SchedulerError):
    pass
