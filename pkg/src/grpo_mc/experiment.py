"""End-to-end training run: build tasks and policy from a RunConfig, train, log, checkpoint."""
from __future__ import annotations

import json
import logging
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .grpo import GRPOTrainer, StepMetrics, evaluate
from .policy import PolicySnapshot, format_prior_params, make_vocabulary, write_checkpoint
from .tasks import default_d_task, gen_tasks, load_manifest

log = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 1_000_003


@dataclass
class RunResult:
    out_dir: Path
    history: list[StepMetrics]
    eval_accuracy: float
    final_checkpoint: Path

    @property
    def last20_acc(self) -> float:
        return float(np.mean([m.reward_acc for m in self.history[-20:]]))

    @property
    def last20_fmt(self) -> float:
        return float(np.mean([m.reward_fmt for m in self.history[-20:]]))


def resolve_d_task(cfg: RunConfig) -> int:
    return cfg.d_task if cfg.d_task is not None else default_d_task(cfg.mode, cfg.n_options)


def build_tasks(cfg: RunConfig):
    d_task = resolve_d_task(cfg)
    if cfg.train_manifest:
        train = load_manifest(cfg.train_manifest, d_task)
    else:
        train = gen_tasks(cfg.mode, cfg.n_train, cfg.n_options, cfg.noise, cfg.seed)
    if cfg.eval_manifest:
        held_out = load_manifest(cfg.eval_manifest, d_task)
    else:
        held_out = gen_tasks(cfg.mode, cfg.n_eval, cfg.n_options, cfg.noise, cfg.seed + EVAL_SEED_OFFSET)
    return train, held_out


def build_initial_snapshot(cfg: RunConfig, n_letters: int = 4) -> PolicySnapshot:
    vocab = make_vocabulary(max(4, n_letters), cfg.n_fillers)
    params = format_prior_params(
        vocab,
        cfg.history_window,
        resolve_d_task(cfg),
        strength=cfg.prior_strength,
        filler_noise=cfg.prior_noise,
        seed=cfg.seed,
        close_strength=cfg.prior_close,
        filler_pairs=cfg.prior_pairs,
    )
    return PolicySnapshot(params, vocab, "current")


def run_training(cfg: RunConfig, out_dir=None, progress=None) -> RunResult:
    """Train for ``cfg.steps`` steps, writing into ``out_dir`` (default ``cfg.out_dir``).

    Files: ``metrics.csv`` (one row per step), ``checkpoints/step_NNNNNN.ckpt``
    at the checkpoint cadence, ``final.ckpt``, ``config.cfg`` (resolved
    config) and ``run_info.json`` (the only file carrying timestamps).
    A :class:`NumericalError` leaves ``last_good.ckpt`` behind and propagates.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(cfg.to_text(), encoding="utf-8")
    started = time.time()

    train, held_out = build_tasks(cfg)
    n_letters = max(t.n_options for t in [*train, *held_out])
    trainer = GRPOTrainer(cfg.train_config(), build_initial_snapshot(cfg, n_letters))

    csv_path = out / "metrics.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(StepMetrics.csv_header() + "\n")

        def on_step(m: StepMetrics, tr: GRPOTrainer):
            fh.write(m.csv_row() + "\n")
            fh.flush()
            done = m.step + 1
            if done % cfg.checkpoint_every == 0:
                write_checkpoint(tr.snapshot, ckpt_dir / f"step_{done:06d}.ckpt")
            if done % cfg.log_every == 0 or done == cfg.steps:
                log.info("step %d acc=%.3f fmt=%.3f kl=%.4f len=%.2f", done, m.reward_acc, m.reward_fmt, m.kl, m.completion_len)
                if progress is not None:
                    progress(m)

        try:
            history = trainer.run(train, cfg.steps, callback=on_step)
        except FloatingPointError:
            write_checkpoint(trainer.snapshot, out / "last_good.ckpt")
            raise

    final = out / "final.ckpt"
    write_checkpoint(trainer.snapshot, final)
    acc = evaluate(trainer.snapshot, held_out, cfg.max_len)
    result = RunResult(out, history, acc, final)
    summary = {
        "steps": len(history),
        "eval_accuracy": acc,
        "last20_reward_acc": result.last20_acc if history else None,
        "last20_reward_fmt": result.last20_fmt if history else None,
        "n_train": len(train),
        "n_eval": len(held_out),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    info = {
        "started_unix": started,
        "finished_unix": time.time(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    (out / "run_info.json").write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")
    return result
