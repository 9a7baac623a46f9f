"""Command line entry point: ``tempo <command>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from tempo.evalharness.collisions import run_collisions
from tempo.evalharness.report import emit_report, load_report, render_summary
from tempo.evalharness.runner import HarnessSettings, build_pipeline, run_paired
from tempo.evalharness.workload import build_workload, load_corpus, read_rows, write_rows
from tempo.pipeline import SimCosts
from tempo.semcache import CacheConfig


def load_config(path: Optional[str]) -> dict:
    """JSON config: {"cache": {...}, "costs": {...}, "clock": "sim", "sim_seed": 0, "timeout": 30}."""
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise SystemExit(f"{path}: config must be a JSON object")
    return cfg


def settings_from(args: argparse.Namespace) -> HarnessSettings:
    cfg = load_config(getattr(args, "config", None))
    cache = dict(cfg.get("cache", {}))
    if getattr(args, "no_window_gate", False):
        cache["window_gate"] = False
    clock = getattr(args, "clock", None) or cfg.get("clock", "sim")
    return HarnessSettings(
        clock=clock,
        costs=SimCosts.from_mapping(cfg.get("costs", {})),
        thresholds=CacheConfig.from_mapping(cache),
        sim_seed=int(cfg.get("sim_seed", 0)),
        timeout=float(cfg.get("timeout", 30.0)),
        optimized_arm=getattr(args, "optimized_arm", None) or cfg.get("optimized_arm", "combined"),
    )


def cmd_gen_workload(args: argparse.Namespace) -> int:
    corpus = read_rows(args.seeds) if args.seeds else load_corpus()
    seeds, test = build_workload(
        corpus, args.warm, args.rows, args.warm_frac, args.rng, adversarial=args.adversarial
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "seeds.csv", seeds)
    write_rows(out / "test.csv", test)
    n_warm = sum(r.tier.value == "Warm" for r in test)
    print(f"wrote {out / 'seeds.csv'} ({len(seeds)} rows) and {out / 'test.csv'} "
          f"({len(test)} rows: {n_warm} warm, {len(test) - n_warm} cold)")
    return 0


def cmd_warm(args: argparse.Namespace) -> int:
    settings = settings_from(args)
    rows = read_rows(args.seeds)
    with build_pipeline(settings.optimized_arm, settings, Path(args.discovery_cache)) as p:
        source = p.prime_discovery()
        inserted = p.warm([r.query() for r in rows])
    print(f"discovery catalog: {source.value}; inserted {inserted} of {len(rows)} seed rows into the cache")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    settings = settings_from(args)
    test = read_rows(args.scenarios)
    seeds_path = args.seeds or str(Path(args.scenarios).with_name("seeds.csv"))
    seeds = read_rows(seeds_path) if Path(seeds_path).exists() else []
    if args.arm in ("optimized", "both") and not seeds:
        print(f"warning: no seed file at {seeds_path}; optimized cache starts empty", file=sys.stderr)
    arms = ("baseline", "optimized") if args.arm == "both" else (args.arm,)

    def progress(i: int, n: int) -> None:
        if args.verbose:
            print(f"  row {i}/{n}", file=sys.stderr)

    result = run_paired(test, seeds, settings, arms, progress=progress)
    report = emit_report(result, args.out)
    sys.stdout.write(render_summary(report))
    print(f"wrote {args.out}/report.json, rows.csv, summary.txt")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    sys.stdout.write(render_summary(load_report(args.in_dir)))
    return 0


def cmd_collisions(args: argparse.Namespace) -> int:
    settings = settings_from(args)
    rep = run_collisions(window_gate=settings.thresholds.window_gate, config=settings.thresholds)
    for p in rep.pairs:
        print(f"{p.kind:7s} sim {p.similarity:.3f} judge {p.judge_score:.3f} "
              f"window-differs {str(p.windows_differ):5s} -> {p.decision}")
    j = rep.to_json()
    print(f"window gate {'on' if rep.window_gate else 'off'}: {j['colliding']} of {len(rep.pairs)} pairs clear "
          f"tau_sim {rep.tau_sim} and collision threshold {rep.collision_threshold}; "
          f"{j['false_positives']} false positives; {j['window_pair_hits']} of {j['window_pairs']} "
          f"window-shifted pairs hit")
    if args.out:
        Path(args.out).write_text(json.dumps(j, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tempo", description="Temporal-aware semantic cache and MCP pipeline harness")
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-workload", help="build seed and test CSVs from a parent corpus")
    g.add_argument("--seeds", help="parent corpus CSV (default: bundled corpus)")
    g.add_argument("--warm", type=int, default=20, help="number of warm parents")
    g.add_argument("--rows", type=int, default=80, help="test rows")
    g.add_argument("--warm-frac", type=float, default=0.6)
    g.add_argument("--rng", type=int, default=42)
    g.add_argument("--adversarial", action="store_true", help="cold rows become parameter-shifted warm paraphrases")
    g.add_argument("--out-dir", default=".")
    g.set_defaults(func=cmd_gen_workload)

    w = sub.add_parser("warm", help="prime the discovery cache and warm a cache from a seed CSV")
    w.add_argument("--seeds", required=True)
    w.add_argument("--config")
    w.add_argument("--discovery-cache", default=".tempo/discovery_cache.json")
    w.add_argument("--clock", choices=("sim", "wall"))
    w.set_defaults(func=cmd_warm)

    r = sub.add_parser("run", help="paired baseline/optimized run over a test CSV")
    r.add_argument("--scenarios", required=True, help="test CSV")
    r.add_argument("--seeds", help="seed CSV for warming (default: seeds.csv next to the test file)")
    r.add_argument("--arm", choices=("baseline", "optimized", "both"), default="both")
    r.add_argument("--optimized-arm", choices=("combined", "mcp_only", "cache_only"))
    r.add_argument("--out", required=True)
    r.add_argument("--config")
    r.add_argument("--clock", choices=("sim", "wall"))
    r.add_argument("--no-window-gate", action="store_true")
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="print the summary of a finished run")
    rep.add_argument("--in", dest="in_dir", required=True)
    rep.set_defaults(func=cmd_report)

    c = sub.add_parser("collisions", help="parameter-collision regression suite")
    c.add_argument("--config")
    c.add_argument("--no-window-gate", action="store_true")
    c.add_argument("--out", help="write the suite result as JSON")
    c.set_defaults(func=cmd_collisions)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
