"""Run the command-line pipeline for each benchmark and aggregate the results.

    python3 scripts/run_benchmarks.py --out-root runs --plants van_der_pol oscillator

Each plant gets its own artifact directory. A plant whose design stage is
refused is listed with its exit code and skipped in the report.
"""

import argparse
import os

from rkmpc.cli import main
from rkmpc.config import PipelineConfig
from rkmpc.plants import BENCHMARKS

STAGES = ("collect", "identify", "validate", "design")


def run_plant(name, out_root, seeds, steps, baseline):
    out = os.path.join(out_root, name)
    os.makedirs(out, exist_ok=True)
    cfg = PipelineConfig()
    cfg.plant.name = name
    if seeds is not None:
        cfg.simulation.seeds = list(range(seeds))
    if steps is not None:
        cfg.simulation.steps = steps
    cfg_path = os.path.join(out, "config.json")
    cfg.save(cfg_path)
    common = ["--config", cfg_path, "--out-dir", out]
    for stage in STAGES:
        code = main([stage] + common)
        if code:
            return stage, code, None
    code = main(["simulate"] + common + (["--baseline", "kmpc"] if baseline else []))
    return "simulate", code, os.path.join(out, "summary.json")


def cli():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-root", default="runs")
    ap.add_argument("--plants", nargs="*", default=sorted(BENCHMARKS))
    ap.add_argument("--seeds", type=int, default=None, help="number of disturbance seeds (default: config)")
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--no-baseline", action="store_true")
    args = ap.parse_args()
    summaries = []
    for name in args.plants:
        stage, code, summary = run_plant(name, args.out_root, args.seeds, args.steps, not args.no_baseline)
        print(f"{name:12s} last stage={stage:9s} exit={code}")
        if summary and os.path.exists(summary):
            summaries.append(summary)
    if summaries:
        main(["report", "--out-dir", args.out_root] + summaries)


if __name__ == "__main__":
    cli()
