"""Parameter-collision regression suite.

Each pair is a long query frame and a copy with exactly one parameter
shifted (asset, sensor or date window). The base query is cached; the
shifted query is looked up. Because the two answer different questions,
a Hit is a false positive. A pair "collides" when its cosine similarity
clears tau_sim and its judge score clears the collision threshold, which
is tau_judge: at that point only the window gate can stop the hit.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Optional, Sequence

from tempo.evalharness.paraphrase import shifted_variants
from tempo.semcache import CacheConfig, Decision, SemanticCache, reference_embed, reference_judge
from tempo.temporal import Query, classify_and_resolve, parse_instant

ISSUED_AT = parse_instant("2020-06-10T09:00:00Z")

FRAMES = (
    "Retrieve the hourly Tonnage sensor readings recorded for Chiller 6 at the MAIN site from 2020-06-01 to "
    "2020-06-07 and summarize any anomalies found in that data",
    "Retrieve the hourly Supply Temperature sensor readings recorded for Chiller 9 at the MAIN site from "
    "2020-06-01 to 2020-06-07 and summarize any anomalies found in that data",
    "Retrieve the daily Vibration sensor readings recorded for Pump 4 at the MAIN site from 2020-06-01 to "
    "2020-06-07 and summarize any anomalies found in that data",
    "Pull the daily Fan Speed sensor readings recorded for AHU 1 at the MAIN site from 2020-06-08 to "
    "2020-06-14 and list every anomaly detected in that period",
)


@dataclass(frozen=True)
class CollisionPair:
    kind: str
    base: str
    shifted: str
    similarity: float
    judge_score: float
    windows_differ: bool
    decision: str

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CollisionReport:
    window_gate: bool
    tau_sim: float
    collision_threshold: float
    pairs: tuple[CollisionPair, ...]

    @property
    def colliding(self) -> list[CollisionPair]:
        """Pairs whose scores clear both thresholds."""
        return [p for p in self.pairs if p.similarity >= self.tau_sim and p.judge_score >= self.collision_threshold]

    @property
    def false_positives(self) -> list[CollisionPair]:
        return [p for p in self.pairs if p.decision == Decision.HIT.value]

    @property
    def window_pairs(self) -> list[CollisionPair]:
        return [p for p in self.pairs if p.windows_differ]

    def to_json(self) -> dict:
        return {
            "window_gate": self.window_gate,
            "tau_sim": self.tau_sim,
            "collision_threshold": self.collision_threshold,
            "pairs": [p.to_json() for p in self.pairs],
            "colliding": len(self.colliding),
            "false_positives": len(self.false_positives),
            "window_pairs": len(self.window_pairs),
            "window_pair_hits": sum(p.decision == Decision.HIT.value for p in self.window_pairs),
        }


def build_pairs(frames: Sequence[str] = FRAMES) -> list[tuple[str, str, str]]:
    return [(kind, base, shifted) for base in frames for kind, shifted in shifted_variants(base)]


def run_collisions(
    window_gate: bool = True,
    config: Optional[CacheConfig] = None,
    frames: Sequence[str] = FRAMES,
    issued_at: datetime = ISSUED_AT,
) -> CollisionReport:
    base_cfg = config or CacheConfig()
    cfg = CacheConfig.from_mapping({**base_cfg.__dict__, "window_gate": window_gate})
    pairs = []
    for i, (kind, base, shifted) in enumerate(build_pairs(frames)):
        cache = SemanticCache(cfg)
        cq_base = classify_and_resolve(Query(f"c{i}a", base, issued_at))
        cq_new = classify_and_resolve(Query(f"c{i}b", shifted, issued_at))
        cache.insert(cq_base, f"answer for: {base}")
        out = cache.lookup(cq_new)
        sim = float(reference_embed(base, cfg.embedding_dim) @ reference_embed(shifted, cfg.embedding_dim))
        pairs.append(
            CollisionPair(
                kind=kind,
                base=base,
                shifted=shifted,
                similarity=round(sim, 6),
                judge_score=round(reference_judge(base, "", shifted), 6),
                windows_differ=cq_base.window != cq_new.window,
                decision=out.decision.value,
            )
        )
    return CollisionReport(window_gate, cfg.tau_sim, cfg.tau_judge, tuple(pairs))


__all__ = ["FRAMES", "CollisionPair", "CollisionReport", "build_pairs", "run_collisions"]
