"""Scenario rows, CSV I/O and the warm/cold workload builder."""

from __future__ import annotations

import csv
import enum
import io
import math
import random
from dataclasses import dataclass
from datetime import datetime
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from tempo.evalharness.paraphrase import adversarial_paraphrase, paraphrase
from tempo.temporal import Query, format_instant, parse_instant

CSV_FIELDS = ("id", "parent_id", "text", "tier", "timestamp")


class Tier(str, enum.Enum):
    SEED = "Seed"
    WARM = "Warm"
    COLD = "Cold"


@dataclass(frozen=True)
class ScenarioRow:
    id: str
    parent_id: str
    text: str
    tier: Tier
    timestamp: datetime

    def query(self) -> Query:
        return Query(self.id, self.text, self.timestamp, self.parent_id)

    def to_record(self) -> list[str]:
        return [self.id, self.parent_id, self.text, self.tier.value, format_instant(self.timestamp)]


class WorkloadError(ValueError):
    pass


def rows_to_csv(rows: Iterable[ScenarioRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow(r.to_record())
    return buf.getvalue()


def rows_from_csv(text: str) -> list[ScenarioRow]:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_FIELDS:
        raise WorkloadError(f"expected header {','.join(CSV_FIELDS)}, got {reader.fieldnames}")
    rows = []
    for n, rec in enumerate(reader, start=2):
        try:
            rows.append(
                ScenarioRow(rec["id"], rec["parent_id"], rec["text"], Tier(rec["tier"]), parse_instant(rec["timestamp"]))
            )
        except ValueError as exc:
            raise WorkloadError(f"line {n}: {exc}") from None
    return rows


def read_rows(path: str | Path) -> list[ScenarioRow]:
    return rows_from_csv(Path(path).read_text("utf-8"))


def write_rows(path: str | Path, rows: Iterable[ScenarioRow]) -> None:
    Path(path).write_text(rows_to_csv(rows), encoding="utf-8", newline="")


def load_corpus() -> list[ScenarioRow]:
    """The bundled parent corpus (one row per parent query)."""
    return rows_from_csv(resources.files("tempo.data").joinpath("corpus.csv").read_text("utf-8"))


def warm_row_count(test_size: int, warm_fraction: float) -> int:
    # round first so 0.6 * 80 = 48.00000000000001 does not ceil to 49
    return math.ceil(round(warm_fraction * test_size, 9))


Paraphraser = Callable[[str, int, int], str]


def build_workload(
    seeds: Sequence[ScenarioRow],
    warm_count: int,
    test_size: int,
    warm_fraction: float,
    rng_seed: int,
    paraphraser: Paraphraser = paraphrase,
    adversarial: bool = False,
) -> tuple[list[ScenarioRow], list[ScenarioRow]]:
    """Split parents into warm and cold, then emit the seed file and test rows.

    The seed file holds one paraphrase (variant 0) per warm parent. Test rows
    use later variants, cycling over parents in partition order. With
    ``adversarial`` the cold share is made of parameter-shifted rewrites of
    warm parents instead; their parent id gets a ``~shift`` suffix, so any
    Hit on them counts as a false positive.
    """
    if not 0.0 < warm_fraction < 1.0:
        raise WorkloadError("warm_fraction must be in (0, 1)")
    if test_size < 0:
        raise WorkloadError("test_size must be >= 0")
    parents: dict[str, ScenarioRow] = {}
    for row in seeds:
        parents.setdefault(row.parent_id, row)
    if not 0 < warm_count <= len(parents):
        raise WorkloadError(f"warm_count must be in [1, {len(parents)}], got {warm_count}")
    rng = random.Random(rng_seed)
    order = sorted(parents)
    rng.shuffle(order)
    warm_ids, cold_ids = order[:warm_count], order[warm_count:]
    n_warm = warm_row_count(test_size, warm_fraction)
    n_cold = test_size - n_warm

    seed_rows = [
        ScenarioRow(f"seed-{i:03d}", pid, paraphraser(parents[pid].text, 0, rng_seed), Tier.SEED, parents[pid].timestamp)
        for i, pid in enumerate(warm_ids, 1)
    ]

    test: list[ScenarioRow] = []
    for i in range(n_warm):
        p = parents[warm_ids[i % len(warm_ids)]]
        text = paraphraser(p.text, 1 + i // len(warm_ids), rng_seed)
        test.append(ScenarioRow("", p.parent_id, text, Tier.WARM, p.timestamp))

    if adversarial:
        shiftable = [pid for pid in warm_ids if adversarial_paraphrase(parents[pid].text, 0, rng_seed)]
        if n_cold and not shiftable:
            raise WorkloadError("no warm parent admits a parameter shift")
        for i in range(n_cold):
            p = parents[shiftable[i % len(shiftable)]]
            kind, text = adversarial_paraphrase(p.text, i // len(shiftable), rng_seed)
            test.append(ScenarioRow("", f"{p.parent_id}~shift", text, Tier.COLD, p.timestamp))
    else:
        if n_cold and not cold_ids:
            raise WorkloadError(f"{n_cold} cold rows requested but every parent is warm")
        for i in range(n_cold):
            p = parents[cold_ids[i % len(cold_ids)]]
            text = paraphraser(p.text, 1 + i // len(cold_ids), rng_seed)
            test.append(ScenarioRow("", p.parent_id, text, Tier.COLD, p.timestamp))

    rng.shuffle(test)
    test = [
        ScenarioRow(f"T{i:03d}", r.parent_id, r.text, r.tier, r.timestamp) for i, r in enumerate(test, 1)
    ]
    return seed_rows, test


def warm_parent_set(seed_rows: Iterable[ScenarioRow]) -> set[str]:
    return {r.parent_id for r in seed_rows}


def gen_workload(
    corpus: Optional[Sequence[ScenarioRow]] = None,
    warm_count: int = 20,
    test_size: int = 80,
    warm_fraction: float = 0.6,
    rng_seed: int = 42,
    adversarial: bool = False,
) -> tuple[str, str]:
    """CSV text for (seed file, test file)."""
    seeds, test = build_workload(
        corpus if corpus is not None else load_corpus(),
        warm_count,
        test_size,
        warm_fraction,
        rng_seed,
        adversarial=adversarial,
    )
    return rows_to_csv(seeds), rows_to_csv(test)


__all__ = [
    "CSV_FIELDS",
    "ScenarioRow",
    "Tier",
    "WorkloadError",
    "build_workload",
    "gen_workload",
    "load_corpus",
    "read_rows",
    "rows_from_csv",
    "rows_to_csv",
    "warm_parent_set",
    "warm_row_count",
    "write_rows",
]
