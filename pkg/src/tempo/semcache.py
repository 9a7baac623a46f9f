"""Temporal semantic cache: embedding retrieval, window gate, judger, LCFU eviction."""

from __future__ import annotations

import enum
import itertools
import json
import logging
import re
import threading
import urllib.request
import zlib
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from typing import Optional, Protocol

import numpy as np

from tempo.temporal import ClassifiedQuery, TemporalBucket, TimeWindow

log = logging.getLogger(__name__)

__all__ = [
    "CacheConfig",
    "CacheEntry",
    "Decision",
    "LookupOutcome",
    "Embedder",
    "Judger",
    "ReferenceEmbedder",
    "ReferenceJudger",
    "HttpEmbedder",
    "HttpJudger",
    "FlatIndex",
    "SemanticCache",
    "CacheContractError",
    "window_compatible",
    "reference_embed",
    "reference_judge",
]


class CacheContractError(ValueError):
    pass


@dataclass(frozen=True)
class CacheConfig:
    tau_sim: float = 0.75
    tau_judge: float = 0.92
    top_k: int = 5
    capacity: int = 50
    embedding_dim: int = 256
    window_gate: bool = True
    scorer_backend: str = "reference"
    scorer_url: Optional[str] = None

    def __post_init__(self) -> None:
        for name in ("tau_sim", "tau_judge"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.tau_judge < self.tau_sim:
            raise ValueError("tau_judge must be >= tau_sim")
        for name in ("top_k", "capacity", "embedding_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.scorer_backend not in ("reference", "http"):
            raise ValueError(f"unknown scorer backend {self.scorer_backend!r}")

    @classmethod
    def from_mapping(cls, values: dict) -> "CacheConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown cache config keys: {sorted(unknown)}")
        return cls(**values)


class Decision(str, enum.Enum):
    HIT = "Hit"
    MISS = "Miss"
    BYPASS = "Bypass"


@dataclass
class CacheEntry:
    entry_id: str
    query_text: str
    embedding: np.ndarray
    answer: str
    window: Optional[TimeWindow]
    hit_count: int
    last_access: int
    inserted_at: datetime
    insert_seq: int = 0


@dataclass(frozen=True)
class LookupOutcome:
    decision: Decision
    answer: Optional[str] = None
    matched_entry: Optional[str] = None
    similarity: Optional[float] = None
    judge_score: Optional[float] = None
    diagnostic: Optional[str] = None
    candidates: int = 0


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class Judger(Protocol):
    def score(self, candidate_query: str, candidate_answer: str, new_query: str) -> float: ...


# --------------------------------------------------------------------------
# Reference scorers


class ReferenceEmbedder:
    """Hashed character-trigram term frequencies folded into ``dim`` buckets.

    Text is lowercased and whitespace-collapsed, padded with one space on each
    side, and every trigram is hashed with CRC-32 (stable across processes).
    """

    def __init__(self, dim: int = 256):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        norm = " " + " ".join(text.lower().split()) + " "
        vec = np.zeros(self.dim, dtype=np.float64)
        for i in range(len(norm) - 2):
            vec[zlib.crc32(norm[i : i + 3].encode("utf-8")) % self.dim] += 1.0
        n = np.linalg.norm(vec)
        if n == 0.0:
            raise ValueError("text produced an all-zero embedding")
        return vec / n


_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokens(text: str) -> set[str]:
    return set(_TOKEN_RE.findall(text.lower()))


class ReferenceJudger:
    """Token Jaccard between the cached query and the new query.

    The cached answer is accepted for interface parity and ignored.
    """

    def score(self, candidate_query: str, candidate_answer: str, new_query: str) -> float:
        a, b = tokens(candidate_query), tokens(new_query)
        union = a | b
        if not union:
            return 0.0
        return len(a & b) / len(union)


_ref_embedders: dict[int, ReferenceEmbedder] = {}


def reference_embed(text: str, dim: int = 256) -> np.ndarray:
    if dim not in _ref_embedders:
        _ref_embedders[dim] = ReferenceEmbedder(dim)
    return _ref_embedders[dim].embed(text)


def reference_judge(cand_query: str, cand_answer: str, new_query: str) -> float:
    return ReferenceJudger().score(cand_query, cand_answer, new_query)


class HttpEmbedder:
    """Embedder backed by a JSON endpoint: POST ``{"input": text}`` -> ``{"embedding": [...]}``."""

    def __init__(self, url: str, dim: int, timeout: float = 30.0):
        self.url = url
        self.dim = dim
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        body = _post_json(self.url, {"input": text}, self.timeout)
        vec = np.asarray(body["embedding"], dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValueError(f"embedding endpoint returned shape {vec.shape}, expected ({self.dim},)")
        return vec / np.linalg.norm(vec)


class HttpJudger:
    """Judger backed by a JSON endpoint: POST query pair + answer -> ``{"score": float}``."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def score(self, candidate_query: str, candidate_answer: str, new_query: str) -> float:
        body = _post_json(
            self.url,
            {"candidate_query": candidate_query, "candidate_answer": candidate_answer, "query": new_query},
            self.timeout,
        )
        return float(body["score"])


def _post_json(url: str, payload: dict, timeout: float) -> dict:
    req = urllib.request.Request(
        url, data=json.dumps(payload).encode("utf-8"), headers={"Content-Type": "application/json"}
    )
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return json.loads(resp.read().decode("utf-8"))


def make_scorers(config: CacheConfig) -> tuple[Embedder, Judger]:
    if config.scorer_backend == "http":
        if not config.scorer_url:
            raise ValueError("scorer_url is required for the http backend")
        base = config.scorer_url.rstrip("/")
        return HttpEmbedder(base + "/embed", config.embedding_dim), HttpJudger(base + "/judge")
    return ReferenceEmbedder(config.embedding_dim), ReferenceJudger()


# --------------------------------------------------------------------------
# Window gate


def window_compatible(entry_window: Optional[TimeWindow], query_window: Optional[TimeWindow]) -> bool:
    """Day-granular equality of windows; two absent windows are compatible."""
    if entry_window is None and query_window is None:
        return True
    if entry_window is None or query_window is None:
        return False
    return (
        entry_window.start.astimezone(timezone.utc).date() == query_window.start.astimezone(timezone.utc).date()
        and entry_window.end.astimezone(timezone.utc).date() == query_window.end.astimezone(timezone.utc).date()
    )


# --------------------------------------------------------------------------
# Index


class FlatIndex:
    """Cosine top-k over unit vectors by a single matrix product.

    Ties on similarity are broken by insertion order so results are stable.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self._ids: list[str] = []
        self._rows: list[np.ndarray] = []
        self._matrix: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self._ids)

    def add(self, entry_id: str, vec: np.ndarray) -> None:
        self._ids.append(entry_id)
        self._rows.append(vec)
        self._matrix = None

    def remove(self, entry_id: str) -> None:
        i = self._ids.index(entry_id)
        del self._ids[i]
        del self._rows[i]
        self._matrix = None

    def search(self, vec: np.ndarray, k: int) -> list[tuple[str, float]]:
        if not self._ids:
            return []
        if self._matrix is None:
            self._matrix = np.vstack(self._rows)
        sims = self._matrix @ vec
        # lexsort: last key is primary
        order = np.lexsort((np.arange(len(sims)), -sims))[:k]
        return [(self._ids[i], float(sims[i])) for i in order]


# --------------------------------------------------------------------------
# Cache


class SemanticCache:
    """In-memory cache of (query, answer) pairs with retrieve-then-judge lookup.

    All public operations hold one lock, so callers see them as atomic.
    """

    def __init__(
        self,
        config: CacheConfig | None = None,
        embedder: Embedder | None = None,
        judger: Judger | None = None,
        now=None,
    ):
        self.config = config or CacheConfig()
        if embedder is None or judger is None:
            default_embedder, default_judger = make_scorers(self.config)
            embedder = embedder or default_embedder
            judger = judger or default_judger
        self.embedder = embedder
        self.judger = judger
        self._now = now or (lambda: datetime.now(timezone.utc))
        self._entries: dict[str, CacheEntry] = {}
        self._index = FlatIndex(self.config.embedding_dim)
        self._lock = threading.RLock()
        self._tick = itertools.count(1)
        self._ids = itertools.count(1)
        self.index_reads = 0
        self.index_writes = 0
        self.evictions = 0

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    @property
    def size(self) -> int:
        return len(self)

    def entries(self) -> list[CacheEntry]:
        with self._lock:
            return [replace(e) for e in self._entries.values()]

    def get(self, entry_id: str) -> CacheEntry:
        with self._lock:
            return replace(self._entries[entry_id])

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
            self._index = FlatIndex(self.config.embedding_dim)

    # -- lookup ------------------------------------------------------------

    def candidates(self, vec: np.ndarray) -> list[tuple[str, float]]:
        """Top-k entries by cosine similarity, best first."""
        with self._lock:
            self.index_reads += 1
            return self._index.search(vec, self.config.top_k)

    def lookup(self, cq: ClassifiedQuery) -> LookupOutcome:
        if cq.bucket is TemporalBucket.VOLATILE:
            return LookupOutcome(Decision.BYPASS)
        try:
            vec = self.embedder.embed(cq.text)
        except Exception as exc:  # the pipeline must still answer
            log.warning("embedder failed: %s", exc)
            return LookupOutcome(Decision.MISS, diagnostic=f"embedder error: {exc}")
        cfg = self.config
        with self._lock:
            found = self.candidates(vec)
            survivors = [(eid, sim) for eid, sim in found if sim >= cfg.tau_sim]
            if cfg.window_gate:
                survivors = [
                    (eid, sim) for eid, sim in survivors if window_compatible(self._entries[eid].window, cq.window)
                ]
            best: tuple[float, float, str] | None = None
            for eid, sim in survivors:
                entry = self._entries[eid]
                try:
                    score = float(self.judger.score(entry.query_text, entry.answer, cq.text))
                except Exception as exc:
                    log.warning("judger failed on %s: %s", eid, exc)
                    continue
                # first survivor wins ties (survivors are already in similarity order)
                if best is None or score > best[0]:
                    best = (score, sim, eid)
            if best is None or best[0] < cfg.tau_judge:
                return LookupOutcome(
                    Decision.MISS,
                    matched_entry=best[2] if best else None,
                    similarity=best[1] if best else None,
                    judge_score=best[0] if best else None,
                    candidates=len(survivors),
                )
            score, sim, eid = best
            entry = self._entries[eid]
            entry.hit_count += 1
            entry.last_access = next(self._tick)
            return LookupOutcome(
                Decision.HIT,
                answer=entry.answer,
                matched_entry=eid,
                similarity=sim,
                judge_score=score,
                candidates=len(survivors),
            )

    # -- insert / evict ----------------------------------------------------

    def insert(self, cq: ClassifiedQuery, answer: str) -> str:
        if cq.bucket is TemporalBucket.VOLATILE:
            raise CacheContractError("Volatile queries are never inserted into the cache")
        vec = self.embedder.embed(cq.text)
        with self._lock:
            if len(self._entries) >= self.config.capacity:
                self.evict_one()
            seq = next(self._ids)
            entry_id = f"e{seq:06d}"
            window = cq.window if cq.bucket is TemporalBucket.ANCHORED else None
            entry = CacheEntry(
                entry_id=entry_id,
                query_text=cq.text,
                embedding=vec,
                answer=answer,
                window=window,
                hit_count=0,
                last_access=next(self._tick),
                inserted_at=self._now(),
                insert_seq=seq,
            )
            self._entries[entry_id] = entry
            self._index.add(entry_id, vec)
            self.index_writes += 1
            return entry_id

    def eviction_key(self, entry: CacheEntry) -> tuple:
        return (entry.hit_count, entry.last_access, entry.inserted_at, entry.insert_seq)

    def evict_one(self) -> str:
        """Remove the least-frequently-used entry (LRU, then FIFO on ties)."""
        with self._lock:
            if not self._entries:
                raise CacheContractError("cannot evict from an empty cache")
            victim = min(self._entries.values(), key=self.eviction_key)
            del self._entries[victim.entry_id]
            self._index.remove(victim.entry_id)
            self.evictions += 1
            return victim.entry_id

