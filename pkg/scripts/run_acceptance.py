#!/usr/bin/env python3
"""Train the default configuration, evaluate it and render its training curves.

    python3 scripts/run_acceptance.py [--out runs/acceptance] [--set key=value ...]
"""
import argparse
import logging
from pathlib import Path

from grpo_mc.config import load_config
from grpo_mc.experiment import run_training
from grpo_mc.plotting import plot_training_curves

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "default.cfg"))
    ap.add_argument("--out", default="runs/acceptance")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = load_config(args.config, args.set).replace(out_dir=args.out)
    result = run_training(cfg)
    svg = plot_training_curves(result.out_dir / "metrics.csv", result.out_dir / "curves.svg")
    first20 = sum(m.reward_acc for m in result.history[:20]) / min(20, len(result.history))
    print(f"accuracy reward: first-20 {first20:.3f} -> last-20 {result.last20_acc:.3f}")
    print(f"format reward last-20: {result.last20_fmt:.3f}")
    print(f"held-out greedy accuracy: {result.eval_accuracy:.4f}")
    print(f"curves: {svg}")


if __name__ == "__main__":
    main()
