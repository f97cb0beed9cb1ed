import enum


class Strategy(enum.Enum):
    EAGER = "eager"
    LAZY_TIMER = "lazy-timer"
    LAZY_HELPER_READSET = "lazy-helper-readset"
    LAZY_HELPER_CLONE = "lazy-helper-clone"

    @property
    def lazy(self):
        return self is not Strategy.EAGER

    @property
    def uses_helper(self):
        return self in (Strategy.LAZY_HELPER_READSET, Strategy.LAZY_HELPER_CLONE)

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        for s in cls:
            if s.value == key or s.name.lower().replace("_", "-") == key:
                return s
        raise ValueError(f"unknown strategy {name!r}; expected one of {[s.value for s in cls]}")


LAZY_STRATEGIES = (Strategy.LAZY_TIMER, Strategy.LAZY_HELPER_READSET, Strategy.LAZY_HELPER_CLONE)


class Mode(enum.Enum):
    EAGER = "eager"
    LAZY = "lazy"


class Status(enum.Enum):
    ACTIVE = "active"
    DOOMED = "doomed"
    COMMITTED = "committed"
    ABORTED = "aborted"


class CommitOutcome(enum.Enum):
    COMMITTED = "committed"
    ABORTED = "aborted"


class Verdict(enum.Enum):
    ABORT_RETRY = "abort-retry"
    PROPAGATE_CONSISTENT = "propagate-consistent"


class WriteClass(enum.Enum):
    LOCAL = "local"
    GUARD = "guard"
    SHARED = "shared"
    UNMAPPED = "unmapped"
