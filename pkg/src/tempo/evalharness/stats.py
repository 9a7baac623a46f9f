"""Decision-quality and latency statistics for paired runs."""

from __future__ import annotations

import math
import statistics
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Optional, Sequence

from tempo.pipeline import PHASES

DIGITS = 6


def _r(x: Optional[float]) -> Optional[float]:
    return None if x is None else round(float(x), DIGITS)


def _div(a: float, b: float) -> float:
    return a / b if b else 0.0


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "fp", "fn", "tn"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 0:
                raise ValueError(f"{name} must be a nonnegative integer")

    @property
    def precision(self) -> float:
        return _div(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _div(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return _div(2 * p * r, p + r)

    @property
    def specificity(self) -> float:
        return _div(self.tn, self.tn + self.fp)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def to_json(self) -> dict:
        out = asdict(self)
        out.update(
            precision=_r(self.precision), recall=_r(self.recall), f1=_r(self.f1), specificity=_r(self.specificity)
        )
        return out


def confusion_from_decisions(rows: Iterable[tuple[bool, bool]]) -> ConfusionMatrix:
    """``rows`` of (is_warm_parent, decided_hit)."""
    tp = fp = fn = tn = 0
    for warm, hit in rows:
        if warm and hit:
            tp += 1
        elif hit:
            fp += 1
        elif warm:
            fn += 1
        else:
            tn += 1
    return ConfusionMatrix(tp, fp, fn, tn)


def decision_quality(records: Sequence, warm_parents: set[str]) -> ConfusionMatrix:
    """Score optimized-arm records: a Hit is a positive prediction; Miss and Bypass are negative."""
    return confusion_from_decisions(
        (r.parent_id in warm_parents, r.outcome.cache_decision.value == "Hit")
        for r in records
        if r.arm == "Optimized"
    )


def median(values: Sequence[float]) -> Optional[float]:
    return statistics.median(values) if values else None


def trimmed_mean(values: Sequence[float], proportion: float = 0.05) -> Optional[float]:
    """Mean after dropping ``floor(proportion * n)`` values from each end."""
    if not 0 <= proportion < 0.5:
        raise ValueError("proportion must be in [0, 0.5)")
    if not values:
        return None
    xs = sorted(values)
    k = math.floor(proportion * len(xs))
    kept = xs[k: len(xs) - k]
    return sum(kept) / len(kept)


def median_of_ratios(pairs: Sequence[tuple[float, float]]) -> Optional[float]:
    """Median over rows of baseline/optimized; rows with a zero denominator are skipped."""
    return median([b / o for b, o in pairs if o > 0])


def phase_medians(timings: Sequence[Mapping[str, float]]) -> dict[str, Optional[float]]:
    return {p: _r(median([t[p] for t in timings])) for p in PHASES + ("total",)}


def latency_stats(pairs: Sequence[tuple]) -> dict:
    """Statistics over (baseline RunRecord, optimized RunRecord) pairs."""
    base = [b.latency for b, _ in pairs]
    opt = [o.latency for _, o in pairs]
    hits = [(b.latency, o.latency) for b, o in pairs if o.outcome.cache_decision.value == "Hit"]
    misses = [(b.latency, o.latency) for b, o in pairs if o.outcome.cache_decision.value != "Hit"]
    return {
        "rows": len(pairs),
        "median_ratio": _r(median_of_ratios(list(zip(base, opt)))),
        "median_latency": {"baseline": _r(median(base)), "optimized": _r(median(opt))},
        "trimmed_mean_5pct": {"baseline": _r(trimmed_mean(base)), "optimized": _r(trimmed_mean(opt))},
        "phase_medians": {
            "baseline": phase_medians([b.outcome.timings.to_json() for b, _ in pairs]),
            "optimized": phase_medians([o.outcome.timings.to_json() for _, o in pairs]),
        },
        "hit_rate": _r(_div(len(hits), len(pairs))),
        "hits": len(hits),
        "median_hit_speedup": _r(median_of_ratios(hits)),
        "miss_rows": len(misses),
        "median_miss_latency": {
            "baseline": _r(median([b for b, _ in misses])),
            "optimized": _r(median([o for _, o in misses])),
        },
        "median_miss_delta": _r(median([o - b for b, o in misses])),
    }


def arm_stats(records: Sequence) -> dict:
    """Single-arm summary for runs without a paired counterpart."""
    lat = [r.latency for r in records]
    return {
        "rows": len(records),
        "median_latency": _r(median(lat)),
        "trimmed_mean_5pct": _r(trimmed_mean(lat)),
        "phase_medians": phase_medians([r.outcome.timings.to_json() for r in records]),
    }


__all__ = [
    "ConfusionMatrix",
    "arm_stats",
    "confusion_from_decisions",
    "decision_quality",
    "latency_stats",
    "median",
    "median_of_ratios",
    "phase_medians",
    "trimmed_mean",
]
