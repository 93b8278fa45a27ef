"""Command-line entry point: ``grpo-mc {train,eval,gen-data,plot}``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import load_config
from .errors import CheckpointError, ConfigError, ManifestError, NumericalError
from .grpo import evaluate
from .policy import read_checkpoint
from .tasks import MODES, gen_tasks, load_manifest, write_manifest

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def cmd_train(args) -> int:
    from .experiment import run_training

    try:
        cfg = load_config(args.config, args.set or ())
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    if args.out:
        cfg = cfg.replace(out_dir=args.out)
    try:
        result = run_training(cfg)
    except NumericalError as exc:
        _err(f"numerical failure: {exc}; last good parameters in {Path(cfg.out_dir) / 'last_good.ckpt'}")
        return EXIT_RUNTIME
    except (ConfigError, ManifestError, OSError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(
        f"final: steps={len(result.history)} eval_accuracy={result.eval_accuracy:.4f} "
        f"last20_reward_acc={result.last20_acc:.4f} last20_reward_fmt={result.last20_fmt:.4f} "
        f"out={result.out_dir}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        snap = read_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    try:
        if args.manifest:
            tasks = load_manifest(args.manifest, snap.params.d_task)
        else:
            tasks = gen_tasks(args.mode, args.n, args.n_options, args.noise, args.seed)
    except (ConfigError, ManifestError, OSError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    n_letters = len(snap.vocab.letters)
    for t in tasks:
        if t.features.size != snap.params.d_task:
            _err(f"checkpoint expects {snap.params.d_task} task features, task {t.id} has {t.features.size}")
            return EXIT_RUNTIME
        if t.n_options > n_letters:
            _err(f"checkpoint vocabulary has {n_letters} option letters, task {t.id} needs {t.n_options}")
            return EXIT_RUNTIME
    print(f"{evaluate(snap, tasks, args.max_len):.4f}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    try:
        tasks = gen_tasks(args.mode, args.n, args.n_options, args.noise, args.seed)
        out = Path(args.out)
        if out.parent and not out.parent.exists():
            out.parent.mkdir(parents=True)
        write_manifest(tasks, out)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except OSError as exc:
        _err(f"cannot write {args.out}: {exc}")
        return EXIT_RUNTIME
    print(f"wrote {len(tasks)} tasks to {args.out}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import plot_training_curves

    try:
        out = plot_training_curves(args.csv, args.out)
    except (ConfigError, ValueError, OSError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p = _Parser(prog="grpo-mc", description="GRPO on synthetic two-cue multiple-choice tasks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="run GRPO training")
    t.add_argument("--config", help="flat 'key = value' config file (default: built-in defaults)")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key; repeatable")
    t.add_argument("--out", help="output directory (overrides out_dir)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="greedy-decoding accuracy of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--manifest", help="JSONL manifest; default is a fresh synthetic split")
    e.add_argument("--mode", choices=MODES, default="xmodal")
    e.add_argument("--n", type=int, default=1000)
    e.add_argument("--n-options", type=int, default=4)
    e.add_argument("--noise", type=float, default=0.1)
    e.add_argument("--seed", type=int, default=12345)
    e.add_argument("--max-len", type=int, default=24)
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic JSONL manifest")
    g.add_argument("--mode", choices=MODES, default="xmodal")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-options", type=int, default=4)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    pl = sub.add_parser("plot", parents=[common], help="render accuracy and completion-length curves as SVG")
    pl.add_argument("csv")
    pl.add_argument("out")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
