"""Run configuration: a flat ``key = value`` file with ``#`` comments.

Every key has a default (the dataclass field default); unknown keys are an
error.  Command-line overrides use the same ``key=value`` syntax and win over
the file.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .grpo import TrainConfig
from .rewards import RewardWeights


@dataclass(frozen=True)
class RunConfig:
    # optimisation
    G: int = 8
    beta: float = 0.04
    lambda_acc: float = 1.0
    lambda_fmt: float = 1.0
    lr: float = 0.03
    temperature: float = 1.0
    max_len: int = 24
    seed: int = 0
    steps: int = 562
    eps_std: float = 1e-8
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 24
    clip_eps: float | None = None
    # environment
    mode: str = "xmodal"
    n_options: int = 4
    noise: float = 0.1
    n_train: int = 4490
    n_eval: int = 1911
    train_manifest: str | None = None
    eval_manifest: str | None = None
    d_task: int | None = None  # None: 2N for xmodal, N for unimodal
    # policy and its initialisation
    history_window: int = 3
    n_fillers: int = 64
    prior_strength: float = 6.0
    prior_noise: float = 0.5
    prior_pairs: float = 4.0
    prior_close: float | None = None
    # output
    out_dir: str = "runs/default"
    log_every: int = 50
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.history_window < 1:
            raise ConfigError("history_window must be >= 1")
        if self.n_train < 1 or self.n_eval < 1:
            raise ConfigError("n_train and n_eval must be >= 1")
        if self.log_every < 1 or self.checkpoint_every < 1:
            raise ConfigError("log_every and checkpoint_every must be >= 1")
        self.train_config()  # validates the optimisation fields

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            G=self.G,
            beta=self.beta,
            weights=RewardWeights(self.lambda_acc, self.lambda_fmt),
            lr=self.lr,
            temperature=self.temperature,
            max_len=self.max_len,
            seed=self.seed,
            steps=self.steps,
            eps_std=self.eps_std,
            optimizer=self.optimizer,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            adam_eps=self.adam_eps,
            batch_size=self.batch_size,
            clip_eps=self.clip_eps,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if v is None else v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    ftype = _FIELDS[key].type
    optional = "None" in ftype
    raw = raw.strip()
    if optional and raw.lower() in ("none", ""):
        return None
    base = ftype.replace("| None", "").strip()
    try:
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {base}") from None


def parse_assignments(lines, source: str = "<overrides>") -> dict:
    values = {}
    for lineno, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (part.strip() for part in text.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path=None, overrides=()) -> RunConfig:
    values = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_assignments(text.splitlines(), str(path)))
    values.update(parse_assignments(overrides, "--set"))
    return RunConfig(**values)
