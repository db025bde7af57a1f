#!/usr/bin/env python3
"""End-to-end desk-scale experiment: synthesize a paired-instrument corpus,
train the denoiser and the schedule network, search a short schedule, run
timbre transfer on held-out audio, and score it.

    python scripts/toy_pipeline.py --workdir /tmp/toy_run [--config configs/toy.json]

Everything is driven through the CLI entry points so this doubles as a smoke
test of the operator workflow. Expect roughly an hour at the default settings
on a 2-core laptop; pass --fast for a minutes-long (low quality) variant.
"""

import argparse
import json
import sys
import time
from pathlib import Path

from retimbre.cli import main as cli


def run(*argv):
    argv = [str(a) for a in argv]
    print(f"\n=== retimbre {' '.join(argv)}", flush=True)
    t0 = time.time()
    code = cli(argv)
    print(f"=== exit {code} ({time.time() - t0:.0f}s)", flush=True)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--config", default=str(Path(__file__).parent.parent / "configs" / "toy.json"))
    parser.add_argument("--fast", action="store_true", help="minutes-long low-quality variant")
    args = parser.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    cfg_path = Path(args.config)
    if args.fast:
        doc = json.loads(cfg_path.read_text())
        doc["training"]["max_steps"] = 200
        doc["training"]["checkpoint_interval"] = 200
        doc["scheduler_training"]["steps"] = 50
        cfg_path = work / "fast_config.json"
        cfg_path.write_text(json.dumps(doc, indent=2))

    doc = json.loads(cfg_path.read_text())
    final_step = doc["training"]["max_steps"]
    sched_steps = doc["scheduler_training"]["steps"]

    run("synth-toy", "--config", cfg_path, "--out", work / "raw", "--pieces", "6")
    run("synth-toy", "--config", cfg_path, "--out", work / "raw_test", "--pieces", "2",
        "--seed", "997")
    run("prepare", "--config", cfg_path, "--manifest", work / "raw" / "manifest.jsonl",
        "--out", work / "prep")
    run("prepare", "--config", cfg_path, "--manifest", work / "raw_test" / "manifest.jsonl",
        "--out", work / "prep_test")
    run("train", "--config", cfg_path, "--manifest", work / "prep" / "manifest.jsonl",
        "--out", work / "train", "--regime", "global")
    ckpt = work / "train" / f"ckpt_{final_step:07d}.pt"
    run("train-scheduler", "--config", cfg_path, "--manifest", work / "prep" / "manifest.jsonl",
        "--denoiser", ckpt, "--out", work / "scheduler")
    sched_ckpt = work / "scheduler" / f"scheduler_{sched_steps:07d}.pt"
    run("search-schedule", "--config", cfg_path, "--manifest", work / "prep" / "manifest.jsonl",
        "--denoiser", ckpt, "--scheduler", sched_ckpt, "--out", work / "search")

    best = work / "search" / "schedules" / "best.json"
    test_manifest = [json.loads(l) for l in (work / "prep_test" / "manifest.jsonl").read_text().splitlines()]
    gen_dir = work / "generated"
    ref_dir = work / "references"
    ref_dir.mkdir(exist_ok=True)
    import shutil

    for i, entry in enumerate(e for e in test_manifest if e["direction"] == "reed->bow"):
        run("infer", "--config", cfg_path, "--denoiser", ckpt, "--input", entry["path_b"],
            "--output", gen_dir / f"transfer_{i:02d}.wav", "--schedule", best)
        shutil.copy(entry["path_a"], ref_dir / f"ref_{i:02d}.wav")

    run("evaluate", "--config", cfg_path, "--generated", gen_dir, "--reference", ref_dir,
        "--out", work / "eval_report.json")
    run("bench", "--config", cfg_path, "--denoiser", ckpt, "--schedule", best,
        "--scheduler", sched_ckpt, "--out", work / "rtf_report.json")

    print("\nEvaluation:", (work / "eval_report.json").read_text())
    print("RTF:", (work / "rtf_report.json").read_text())


if __name__ == "__main__":
    main()
