#!/usr/bin/env python3
"""Run the default configuration over several seeds and tabulate the outcomes.

    python3 scripts/seed_study.py --seeds 0-12 [--out runs/seeds] [--set key=value ...]

Each seed takes about a minute on one core.  Prints one row per seed and
writes ``seed_study.csv`` in the output directory.
"""
import argparse
import csv
from pathlib import Path

from grpo_mc.config import load_config
from grpo_mc.experiment import run_training

ROOT = Path(__file__).resolve().parents[1]


def parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        lo, _, hi = part.partition("-")
        seeds.extend(range(int(lo), int(hi or lo) + 1))
    return seeds


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", default="0-4", help="e.g. 0-12 or 0,3,7")
    ap.add_argument("--config", default=str(ROOT / "configs" / "default.cfg"))
    ap.add_argument("--out", default="runs/seeds")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()

    base = load_config(args.config, args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    print(f"{'seed':>4} {'last20_acc':>10} {'last20_fmt':>10} {'eval_acc':>8}  pass")
    for seed in parse_seeds(args.seeds):
        r = run_training(base.replace(seed=seed), out / f"seed_{seed:03d}")
        ok = r.last20_acc >= 0.9 and r.last20_fmt >= 0.95 and r.eval_accuracy >= 0.9
        rows.append(dict(seed=seed, last20_acc=r.last20_acc, last20_fmt=r.last20_fmt, eval_acc=r.eval_accuracy, passed=ok))
        print(f"{seed:>4} {r.last20_acc:>10.3f} {r.last20_fmt:>10.3f} {r.eval_accuracy:>8.4f}  {'yes' if ok else 'no'}", flush=True)
    with open(out / "seed_study.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"{sum(r['passed'] for r in rows)}/{len(rows)} seeds pass")


if __name__ == "__main__":
    main()
