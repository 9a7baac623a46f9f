"""Workload generation, paired runs, statistics and reports."""

from tempo.evalharness.stats import ConfusionMatrix, decision_quality, latency_stats, median_of_ratios, trimmed_mean
from tempo.evalharness.workload import ScenarioRow, Tier, build_workload, load_corpus

__all__ = [
    "ConfusionMatrix",
    "ScenarioRow",
    "Tier",
    "build_workload",
    "decision_quality",
    "latency_stats",
    "load_corpus",
    "median_of_ratios",
    "trimmed_mean",
]
