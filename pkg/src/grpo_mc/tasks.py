"""Synthetic two-cue multiple-choice tasks and JSONL manifest ingestion."""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ManifestError

MODES = ("unimodal", "xmodal")


def letter(i: int) -> str:
    return chr(ord("A") + i)


@dataclass(frozen=True)
class Task:
    id: str
    features: np.ndarray
    options: tuple[str, ...]
    gold: frozenset[str]
    question: str = ""

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"task {self.id}: non-finite features")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "options", tuple(self.options))
        object.__setattr__(self, "gold", frozenset(self.gold))
        n = len(self.options)
        if not 2 <= n <= 26:
            raise ValueError(f"task {self.id}: {n} options, need 2..26")
        valid = {letter(i) for i in range(n)}
        if not self.gold or not self.gold <= valid:
            raise ValueError(f"task {self.id}: gold {sorted(self.gold)} not within {sorted(valid)}")

    @property
    def n_options(self) -> int:
        return len(self.options)

    def __eq__(self, other):
        if not isinstance(other, Task):
            return NotImplemented
        return (
            self.id == other.id
            and self.options == other.options
            and self.gold == other.gold
            and self.question == other.question
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None


def default_d_task(mode: str, n_options: int) -> int:
    return 2 * n_options if mode == "xmodal" else n_options


def gen_tasks(mode: str, n: int, n_options: int = 4, noise: float = 0.0, seed: int = 0) -> list[Task]:
    """Generate ``n`` synthetic tasks.

    ``unimodal``: one latent class c, features onehot(c) + noise, gold letter(c).
    ``xmodal``: two cues a, v, features [onehot(a), onehot(v)] + noise and gold
    letter((a + v) mod N); neither half alone says anything about the label.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown task mode {mode!r}; expected one of {MODES}")
    if not 2 <= n_options <= 8:
        raise ConfigError(f"n_options must be in [2, 8], got {n_options}")
    if n < 1:
        raise ConfigError("n must be >= 1")
    if noise < 0:
        raise ConfigError("noise must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0x7A5C]))
    N = n_options
    eye = np.eye(N)
    tasks = []
    for i in range(n):
        if mode == "unimodal":
            c = int(rng.integers(N))
            base = eye[c]
            gold = letter(c)
            question = f"cue {c}: which option?"
        else:
            a, v = (int(x) for x in rng.integers(N, size=2))
            base = np.concatenate([eye[a], eye[v]])
            gold = letter((a + v) % N)
            question = f"audio cue {a}, visual cue {v}: which option?"
        feats = base + noise * rng.standard_normal(base.size) if noise > 0 else base.copy()
        options = tuple(f"option {letter(j)}" for j in range(N))
        tasks.append(Task(f"{mode}-{seed}-{i:06d}", feats, options, {gold}, question))
    return tasks


def xmodal_task(a: int, v: int, n_options: int = 4, noise_vec=None) -> Task:
    """A single noiseless (or explicitly perturbed) cross-cue task."""
    N = n_options
    base = np.concatenate([np.eye(N)[a], np.eye(N)[v]])
    if noise_vec is not None:
        base = base + np.asarray(noise_vec)
    return Task(f"xmodal-a{a}-v{v}", base, tuple(f"option {letter(j)}" for j in range(N)), {letter((a + v) % N)})


# --- manifests ----------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z0-9]+")


def hashed_features(text: str, dim: int) -> np.ndarray:
    """Signed feature hashing of lowercase alphanumeric words, L2-normalised.

    Each word's BLAKE2b-64 digest (little-endian) picks the slot ``h % dim``
    and the sign from bit 63.
    """
    vec = np.zeros(dim)
    for word in _WORD_RE.findall(text.lower()):
        h = int.from_bytes(hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest(), "little")
        vec[h % dim] += -1.0 if h >> 63 else 1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


def task_to_record(task: Task) -> dict:
    return {
        "id": task.id,
        "question": task.question,
        "options": list(task.options),
        "answer": "".join(sorted(task.gold)),
        "features": [float(x) for x in task.features],
    }


def write_manifest(tasks, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in tasks:
            fh.write(json.dumps(task_to_record(t), separators=(",", ":")) + "\n")


def _record_to_task(rec, d_task: int | None) -> Task:
    if not isinstance(rec, dict):
        raise ValueError("record is not a JSON object")
    for key in ("id", "question", "options", "answer"):
        if key not in rec:
            raise ValueError(f"missing required field {key!r}")
    options = rec["options"]
    if not isinstance(options, list) or not all(isinstance(o, str) for o in options):
        raise ValueError("'options' must be an array of strings")
    if not 2 <= len(options) <= 26:
        raise ValueError(f"need 2..26 options, got {len(options)}")
    answer = rec["answer"]
    if not isinstance(answer, str) or not answer:
        raise ValueError("'answer' must be a non-empty string of letters")
    valid = {letter(i) for i in range(len(options))}
    gold = set(answer.upper().replace(",", "").replace(" ", ""))
    if not gold <= valid:
        raise ValueError(f"unknown answer letter(s) {''.join(sorted(gold - valid))}")
    if rec.get("features") is not None:
        feats = rec["features"]
        if not isinstance(feats, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in feats):
            raise ValueError("'features' must be an array of numbers")
        feats = np.asarray(feats, dtype=np.float64)
        if d_task is not None and feats.size != d_task:
            raise ValueError(f"expected {d_task} features, got {feats.size}")
    else:
        if d_task is None:
            raise ValueError("record has no features and no d_task was given for hashing")
        feats = hashed_features(" ".join([rec["question"], *options]), d_task)
    return Task(str(rec["id"]), feats, tuple(options), gold, rec["question"])


def load_manifest(path, d_task: int | None = None, expected_count: int | None = None) -> list[Task]:
    """Read a JSONL manifest, one task per non-blank line, in file order.

    Records lacking ``features`` are featurised with :func:`hashed_features`
    into ``d_task`` dimensions.  All bad lines are collected and reported
    together in a :class:`ManifestError`.
    """
    tasks: list[Task] = []
    problems: list[tuple[int, str]] = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                task = _record_to_task(json.loads(line), d_task)
            except (json.JSONDecodeError, ValueError) as exc:
                problems.append((lineno, str(exc)))
                continue
            if task.id in seen:
                problems.append((lineno, f"duplicate id {task.id!r} (first on line {seen[task.id]})"))
                continue
            seen[task.id] = lineno
            tasks.append(task)
    if problems:
        raise ManifestError(problems)
    if expected_count is not None and len(tasks) != expected_count:
        raise ManifestError([(0, f"expected {expected_count} records, found {len(tasks)}")])
    return tasks
