"""Temporal classification of queries and resolution of time expressions.

Every query is routed into one of four buckets before it reaches the
semantic cache:

* ``VOLATILE`` asks for live state and must never be served from cache.
* ``STATIC`` has no temporal dependence.
* ``RELATIVE`` contains a phrase such as "yesterday" that only means
  something relative to the moment the query was issued.
* ``ANCHORED`` names a fixed calendar window.

Relative queries are resolved into concrete windows here and leave this
module as ``ANCHORED``; a relative phrase that cannot be resolved is demoted
to ``VOLATILE``. All calendar arithmetic is done in UTC.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

__all__ = [
    "TemporalBucket",
    "TimeWindow",
    "Query",
    "ClassifiedQuery",
    "Rule",
    "TemporalClassifier",
    "load_rules",
    "classify",
    "resolve_window",
    "classify_and_resolve",
    "parse_instant",
    "format_instant",
]

UTC = timezone.utc


class TemporalBucket(str, enum.Enum):
    VOLATILE = "Volatile"
    STATIC = "Static"
    RELATIVE = "Relative"
    ANCHORED = "Anchored"


@dataclass(frozen=True)
class TimeWindow:
    """Half-open interval ``[start, end)`` of UTC instants."""

    start: datetime
    end: datetime

    def __post_init__(self) -> None:
        if self.start.tzinfo is None or self.end.tzinfo is None:
            raise ValueError("TimeWindow bounds must be timezone-aware")
        if not self.start < self.end:
            raise ValueError(f"empty window: {self.start} >= {self.end}")

    def shifted(self, delta: timedelta) -> "TimeWindow":
        return TimeWindow(self.start + delta, self.end + delta)

    def to_json(self) -> dict:
        return {"start": format_instant(self.start), "end": format_instant(self.end)}

    @classmethod
    def from_json(cls, obj: dict) -> "TimeWindow":
        return cls(parse_instant(obj["start"]), parse_instant(obj["end"]))


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    issued_at: datetime
    parent_id: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError("query text must be non-empty")
        if self.issued_at.tzinfo is None:
            raise ValueError("issued_at must be timezone-aware (UTC)")
        # seconds precision
        object.__setattr__(self, "issued_at", self.issued_at.astimezone(UTC).replace(microsecond=0))


@dataclass(frozen=True)
class ClassifiedQuery:
    query: Query
    bucket: TemporalBucket
    window: Optional[TimeWindow] = None

    def __post_init__(self) -> None:
        if self.bucket is TemporalBucket.RELATIVE:
            raise ValueError("Relative queries must be resolved or demoted before leaving the classifier")

    @property
    def text(self) -> str:
        return self.query.text

    @property
    def cacheable(self) -> bool:
        return self.bucket is not TemporalBucket.VOLATILE


def parse_instant(value: str) -> datetime:
    """Parse an ISO-8601 instant; a trailing ``Z`` and naive values mean UTC."""
    text = value.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=UTC)
    return dt.astimezone(UTC)


def format_instant(dt: datetime) -> str:
    return dt.astimezone(UTC).strftime("%Y-%m-%dT%H:%M:%SZ")


# --------------------------------------------------------------------------
# Rule table


@dataclass(frozen=True)
class Rule:
    bucket: TemporalBucket
    pattern: re.Pattern


_BUCKET_NAMES = {b.value.lower(): b for b in TemporalBucket}


def parse_rules(text: str) -> list[Rule]:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            name, pattern = line.split("\t", 1)
        except ValueError:
            raise ValueError(f"rule line {lineno}: expected '<bucket>\\t<pattern>'") from None
        bucket = _BUCKET_NAMES.get(name.strip().lower())
        if bucket is None:
            raise ValueError(f"rule line {lineno}: unknown bucket {name!r}")
        rules.append(Rule(bucket, re.compile(pattern, re.IGNORECASE)))
    return rules


def load_rules(path: str | Path | None = None) -> list[Rule]:
    if path is None:
        text = resources.files("tempo.data").joinpath("temporal_rules.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return parse_rules(text)


# --------------------------------------------------------------------------
# Window grammar

_ISO_DATE = r"(\d{4}-\d{2}-\d{2})"
_RANGE_RE = re.compile(
    rf"\b(?:from|between)\s+{_ISO_DATE}\s+(?:to|and|through|until)\s+{_ISO_DATE}\b", re.IGNORECASE
)
_DATE_RE = re.compile(rf"\b{_ISO_DATE}\b")
_N_UNITS_RE = re.compile(r"\b(?:past|last)\s+(\d+)\s+(hours?|days?)\b", re.IGNORECASE)
_YESTERDAY_RE = re.compile(r"\byesterday\b", re.IGNORECASE)
_TODAY_RE = re.compile(r"\btoday\b", re.IGNORECASE)
_LAST_WEEK_RE = re.compile(r"\blast\s+week\b", re.IGNORECASE)
_LAST_MONTH_RE = re.compile(r"\blast\s+month\b", re.IGNORECASE)


def _midnight(d: date) -> datetime:
    return datetime(d.year, d.month, d.day, tzinfo=UTC)


def _parse_day(s: str) -> Optional[date]:
    try:
        return date.fromisoformat(s)
    except ValueError:
        return None


def _resolve_relative(text: str, issued_at: datetime) -> Optional[TimeWindow]:
    t = issued_at.astimezone(UTC)
    today = _midnight(t.date())
    m = _N_UNITS_RE.search(text)
    if m:
        n = int(m.group(1))
        if n <= 0:
            return None
        unit = timedelta(hours=1) if m.group(2).lower().startswith("hour") else timedelta(days=1)
        return TimeWindow(t - n * unit, t)
    if _YESTERDAY_RE.search(text):
        return TimeWindow(today - timedelta(days=1), today)
    if _TODAY_RE.search(text):
        return TimeWindow(today, today + timedelta(days=1))
    if _LAST_WEEK_RE.search(text):
        this_monday = today - timedelta(days=t.weekday())
        return TimeWindow(this_monday - timedelta(days=7), this_monday)
    if _LAST_MONTH_RE.search(text):
        first = today.replace(day=1)
        prev = (first - timedelta(days=1)).replace(day=1)
        return TimeWindow(prev, first)
    return None


def _resolve_anchored(text: str) -> Optional[TimeWindow]:
    m = _RANGE_RE.search(text)
    if m:
        lo, hi = _parse_day(m.group(1)), _parse_day(m.group(2))
        if lo is None or hi is None or hi < lo:
            return None
        # end date is inclusive by day
        return TimeWindow(_midnight(lo), _midnight(hi) + timedelta(days=1))
    m = _DATE_RE.search(text)
    if m:
        d = _parse_day(m.group(1))
        if d is None:
            return None
        return TimeWindow(_midnight(d), _midnight(d) + timedelta(days=1))
    return None


class TemporalClassifier:
    """Ordered regex rule table plus the window resolver."""

    def __init__(self, rules: Sequence[Rule] | None = None):
        self.rules = list(rules) if rules is not None else load_rules()

    def classify(self, text: str) -> TemporalBucket:
        if not text or not text.strip():
            raise ValueError("text must be non-empty")
        for rule in self.rules:
            if rule.pattern.search(text):
                return rule.bucket
        return TemporalBucket.STATIC

    @staticmethod
    def resolve_window(bucket: TemporalBucket, text: str, issued_at: datetime) -> Optional[TimeWindow]:
        if bucket is TemporalBucket.RELATIVE:
            return _resolve_relative(text, issued_at)
        if bucket is TemporalBucket.ANCHORED:
            return _resolve_anchored(text)
        raise ValueError(f"no window semantics for bucket {bucket.value}")

    def classify_and_resolve(self, query: Query) -> ClassifiedQuery:
        bucket = self.classify(query.text)
        if bucket is TemporalBucket.RELATIVE:
            window = self.resolve_window(bucket, query.text, query.issued_at)
            if window is None:
                return ClassifiedQuery(query, TemporalBucket.VOLATILE)
            return ClassifiedQuery(query, TemporalBucket.ANCHORED, window)
        if bucket is TemporalBucket.ANCHORED:
            return ClassifiedQuery(query, bucket, self.resolve_window(bucket, query.text, query.issued_at))
        return ClassifiedQuery(query, bucket)


_default: TemporalClassifier | None = None


def _classifier() -> TemporalClassifier:
    global _default
    if _default is None:
        _default = TemporalClassifier()
    return _default


def classify(text: str) -> TemporalBucket:
    return _classifier().classify(text)


def resolve_window(bucket: TemporalBucket, text: str, issued_at: datetime) -> Optional[TimeWindow]:
    return TemporalClassifier.resolve_window(bucket, text, issued_at)


def classify_and_resolve(query: Query) -> ClassifiedQuery:
    return _classifier().classify_and_resolve(query)
