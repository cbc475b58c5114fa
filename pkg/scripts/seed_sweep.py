#!/usr/bin/env python3
"""Multi-seed comparison of flat vs curriculum training.

Runs the reference experiment across several seeds and summarizes the
rare-label effect: mean test micro-F1 for both modes and the mean
rare-quartile AUC delta (curriculum minus flat).

Usage: python3 scripts/seed_sweep.py [--seeds 0,1,2,3,4] [--out DIR]
"""
import argparse
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from hicu.cli import main as hicu


def one_seed(root: Path, seed: int) -> dict:
    corpus = root / "corpus"
    steps = [
        ["synth", "--out", str(corpus), "--branching", "3,3,3,3,3",
         "--docs", "2000,300,300", "--seed", str(seed)],
    ]
    common = [
        "--ranges", str(corpus / "ranges.tsv"),
        "--train", str(corpus / "train.jsonl"),
        "--valid", str(corpus / "valid.jsonl"),
        "--epochs-per-level", "1,1,1,2,40", "--patience", "8",
        "--d-e", "16", "--d-f", "16", "--lr", "0.002", "--seed", str(seed),
    ]
    steps.append(["train", "--mode", "flat", "--out", str(root / "flat")] + common)
    steps.append(["train", "--mode", "hicu", "--out", str(root / "hicu")] + common)
    steps.append(["eval", "--checkpoint", str(root / "flat" / "checkpoint.bin"),
                  "--test", str(corpus / "test.jsonl"), "--out", str(root / "fe")])
    steps.append(["eval", "--checkpoint", str(root / "hicu" / "checkpoint.bin"),
                  "--test", str(corpus / "test.jsonl"),
                  "--train", str(corpus / "train.jsonl"),
                  "--baseline", str(root / "fe" / "scores.npy"),
                  "--out", str(root / "he")])
    for argv in steps:
        if hicu(argv) != 0:
            raise RuntimeError(f"command failed: {' '.join(argv)}")
    flat = json.loads((root / "fe" / "eval.jsonl").read_text().splitlines()[0])
    records = [json.loads(l) for l in (root / "he" / "eval.jsonl").read_text().splitlines()]
    buckets = [r for r in records if r["event"] == "auc_bucket" and r["n_scored"]]
    return {
        "seed": seed,
        "flat_micro_f1": flat["micro_f1"],
        "hicu_micro_f1": records[0]["micro_f1"],
        "rare_delta": buckets[0]["mean_auc_delta"] if buckets else None,
    }


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--seeds", default="0,1,2,3,4")
    parser.add_argument("--out", default=None)
    args = parser.parse_args()
    seeds = [int(s) for s in args.seeds.split(",")]

    results = []
    base = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="seed-sweep-"))
    for seed in seeds:
        root = base / f"seed-{seed}"
        res = one_seed(root, seed)
        results.append(res)
        print(f"seed {seed}: flat {res['flat_micro_f1']:.4f}  "
              f"hicu {res['hicu_micro_f1']:.4f}  "
              f"rare-quartile AUC delta {res['rare_delta']:+.4f}")

    flat = np.array([r["flat_micro_f1"] for r in results])
    hc = np.array([r["hicu_micro_f1"] for r in results])
    rare = np.array([r["rare_delta"] for r in results if r["rare_delta"] is not None])
    print()
    print(f"flat micro-F1: {flat.mean():.4f} +/- {flat.std():.4f}")
    print(f"hicu micro-F1: {hc.mean():.4f} +/- {hc.std():.4f}")
    if len(rare):
        wins = int((rare > 0).sum())
        print(f"rare-quartile AUC delta: {rare.mean():+.4f} +/- {rare.std():.4f} "
              f"(positive in {wins}/{len(rare)} seeds)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
