"""Repetition rule: keep sampling until the confidence interval of the mean is tight enough.

The interval uses the normal approximation: half-width = z * s / sqrt(n) with
z the two-sided quantile for the confidence level.  The rule stops when the
half-width falls below ``threshold`` times the sample standard deviation.
Since s cancels, that is a pure condition on n (z / sqrt(n) < threshold); a
zero standard deviation stops at once.
"""

import enum
import math
import statistics
from dataclasses import dataclass

MIN_REPS = 2


class Decision(enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"


def z_value(confidence):
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    return statistics.NormalDist().inv_cdf(0.5 + confidence / 2.0)


@dataclass(frozen=True)
class Interval:
    n: int
    mean: float
    stdev: float
    half_width: float


def interval(samples, confidence=0.90):
    n = len(samples)
    if n < MIN_REPS:
        raise ValueError(f"need at least {MIN_REPS} samples, got {n}")
    mean = statistics.fmean(samples)
    sd = statistics.stdev(samples)
    return Interval(n, mean, sd, z_value(confidence) * sd / math.sqrt(n))


def ci_stop_rule(samples, confidence=0.90, threshold=0.05):
    """STOP iff the CI half-width of the mean is below ``threshold`` x sample stdev."""
    ci = interval(samples, confidence)
    if ci.stdev == 0.0:
        return Decision.STOP
    return Decision.STOP if ci.half_width < threshold * ci.stdev else Decision.CONTINUE


def repeat_until_stable(sample, confidence=0.90, threshold=0.05, max_reps=30):
    """Call ``sample()`` until the rule says stop or ``max_reps`` is reached.

    Returns ``(samples, stopped_by_rule)``.
    """
    if max_reps < MIN_REPS:
        raise ValueError(f"max_reps must be at least {MIN_REPS}")
    samples = []
    while len(samples) < max_reps:
        samples.append(sample())
        if len(samples) >= MIN_REPS and ci_stop_rule(samples, confidence, threshold) is Decision.STOP:
            return samples, True
    return samples, False


def stop_index(stream, confidence=0.90, threshold=0.05, max_reps=None):
    """Number of samples the rule consumes from ``stream`` (None if it never stops)."""
    samples = []
    for x in stream:
        samples.append(x)
        if max_reps is not None and len(samples) >= max_reps:
            return len(samples)
        if len(samples) >= MIN_REPS and ci_stop_rule(samples, confidence, threshold) is Decision.STOP:
            return len(samples)
    return None


__all__ = ["Decision", "Interval", "MIN_REPS", "ci_stop_rule", "interval", "repeat_until_stable",
           "stop_index", "z_value"]
