"""Toy autoregressive linear-softmax policy.

The context feature for step t is the task feature vector followed by k one-hot
blocks for the k most recent tokens (most recent first; missing slots are zero):

    phi_t = [features, onehot(h[t-1]), ..., onehot(h[t-k])]

and the next-token distribution is softmax(W @ phi_t / temperature).  Because
the policy is linear in W, sequence log-probabilities have a closed-form
gradient and no autodiff is needed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CheckpointError, InvalidTokenError, NumericalError

THINK_OPEN = "<think>"
THINK_CLOSE = "</think>"
ANSWER_OPEN = "<answer>"
ANSWER_CLOSE = "</answer>"
EOS = "<eos>"
TAGS = (THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE)

CHECKPOINT_MAGIC = "grpo-mc-ckpt v1"


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token symbols.

    Layout used by :func:`make_vocabulary`: the four tags, ``<eos>``, the option
    letters, then filler "reasoning words" ``w00``, ``w01``, ...
    """

    tokens: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if len(tokens) < 10:
            raise ValueError(f"vocabulary needs at least 10 symbols, got {len(tokens)}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary symbols must be distinct")
        for sym in tokens:
            if not sym or any(c.isspace() for c in sym):
                raise ValueError(f"bad vocabulary symbol {sym!r}")
        for sym in (*TAGS, EOS, "A", "B", "C", "D"):
            if sym not in tokens:
                raise ValueError(f"vocabulary is missing required symbol {sym}")
        object.__setattr__(self, "index", {s: i for i, s in enumerate(tokens)})

    def __len__(self):
        return len(self.tokens)

    def id(self, symbol: str) -> int:
        return self.index[symbol]

    @property
    def eos_id(self) -> int:
        return self.index[EOS]

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(t for t in self.tokens if len(t) == 1 and "A" <= t <= "Z")

    @property
    def fillers(self) -> tuple[str, ...]:
        special = set(TAGS) | {EOS} | set(self.letters)
        return tuple(t for t in self.tokens if t not in special)

    def detokenize(self, token_ids: Sequence[int]) -> str:
        """Render ids as text.

        Tokens are separated by one space, except that no space follows an
        opening tag or precedes a closing tag.  ``<eos>`` ends the text and is
        not rendered.
        """
        out: list[str] = []
        prev = None
        for tid in token_ids:
            sym = self.tokens[tid]
            if sym == EOS:
                break
            if prev is not None and prev not in (THINK_OPEN, ANSWER_OPEN) and sym not in (
                THINK_CLOSE,
                ANSWER_CLOSE,
            ):
                out.append(" ")
            out.append(sym)
            prev = sym
        return "".join(out)


def make_vocabulary(n_letters: int = 4, n_fillers: int = 16) -> Vocabulary:
    if not 4 <= n_letters <= 26:
        raise ValueError("n_letters must be in [4, 26]")
    letters = [chr(ord("A") + i) for i in range(n_letters)]
    fillers = [f"w{i:02d}" for i in range(n_fillers)]
    return Vocabulary((*TAGS, EOS, *letters, *fillers))


@dataclass(frozen=True)
class PolicyParams:
    """Weights W (V x D) stored flat, plus the shape metadata."""

    flat: np.ndarray
    V: int
    k: int
    d_task: int

    def __post_init__(self):
        flat = np.array(self.flat, dtype=np.float64).reshape(-1)
        if flat.size != self.V * self.D:
            raise ValueError(f"expected {self.V * self.D} parameters, got {flat.size}")
        if self.k < 1:
            raise ValueError("history window k must be >= 1")
        if not np.all(np.isfinite(flat)):
            raise NumericalError("policy parameters contain non-finite entries")
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)

    @property
    def D(self) -> int:
        return self.d_task + self.k * self.V

    @property
    def W(self) -> np.ndarray:
        return self.flat.reshape(self.V, self.D)

    @classmethod
    def zeros(cls, V: int, k: int, d_task: int) -> "PolicyParams":
        return cls(np.zeros(V * (d_task + k * V)), V, k, d_task)

    def with_flat(self, flat: np.ndarray) -> "PolicyParams":
        return PolicyParams(flat, self.V, self.k, self.d_task)


def format_prior_params(
    vocab: Vocabulary,
    k: int,
    d_task: int,
    strength: float = 6.0,
    filler_noise: float = 0.0,
    seed: int = 0,
    feature_mass: float = 2.0,
    close_strength: float | None = None,
    filler_pairs: float = 0.0,
) -> PolicyParams:
    """Initial weights encoding a loose tag grammar, standing in for a pretrained model.

    Only the most-recent-token block and the task block are set; nothing ties
    an input to a particular letter.  With ``filler_noise > 0`` the task-block
    weights of filler rows get seeded Gaussian noise, so each input starts
    with its own arbitrary preference among fillers.  Fillers also carry a
    task-block offset of ``-strength / feature_mass`` (``feature_mass`` being
    the typical feature sum) that is cancelled only after ``<think>`` or a
    filler, keeping the noise from leaking into the other grammar slots.
    ``close_strength`` (default ``2 * strength``) is the pull towards
    ``</think>`` after a filler; lower values give longer reasoning spans.
    With ``filler_pairs > 0`` every filler also gets that weight on two
    randomly chosen task dimensions, making it a detector for their
    co-occurrence.
    """
    V = len(vocab)
    W = np.zeros((V, d_task + k * V))
    ids = vocab.index
    fillers = [ids[f] for f in vocab.fillers]
    prev_col = lambda sym: d_task + ids[sym]  # noqa: E731
    # first step: the task block is the only non-zero context
    W[ids[THINK_OPEN], :d_task] = strength / feature_mass
    W[fillers, :d_task] = -strength / feature_mass
    W[ids[THINK_OPEN], d_task : d_task + V] = -2 * strength
    for f in vocab.fillers:
        W[fillers, prev_col(f)] = strength
        W[fillers, prev_col(THINK_OPEN)] = 2 * strength
        W[ids[THINK_CLOSE], prev_col(f)] = 2 * strength if close_strength is None else close_strength
    W[ids[ANSWER_OPEN], prev_col(THINK_CLOSE)] = strength
    for letter in vocab.letters:
        W[ids[letter], prev_col(ANSWER_OPEN)] = strength
        W[ids[ANSWER_CLOSE], prev_col(letter)] = strength
    W[ids[EOS], prev_col(ANSWER_CLOSE)] = strength
    if filler_noise > 0:
        rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0x1417]))
        W[fillers, :d_task] += filler_noise * rng.standard_normal((len(fillers), d_task))
    if filler_pairs > 0:
        rng = np.random.default_rng(np.random.SeedSequence([seed & (2**64 - 1), 0x9A1F]))
        for f in fillers:
            W[f, rng.choice(d_task, size=2, replace=False)] += filler_pairs
    return PolicyParams(W.reshape(-1), V, k, d_task)


@dataclass(frozen=True)
class PolicySnapshot:
    params: PolicyParams
    vocab: Vocabulary
    role: str = "current"

    def __post_init__(self):
        if self.role not in ("current", "old", "reference"):
            raise ValueError(f"unknown snapshot role {self.role!r}")
        if len(self.vocab) != self.params.V:
            raise ValueError("vocabulary size does not match parameter shape")

    def as_role(self, role: str) -> "PolicySnapshot":
        return PolicySnapshot(self.params, self.vocab, role)


@dataclass(frozen=True)
class Completion:
    token_ids: tuple[int, ...]
    step_logprobs: tuple[float, ...]
    text: str

    @property
    def logprob(self) -> float:
        return math.fsum(self.step_logprobs)

    def __len__(self):
        return len(self.token_ids)


def _check_ids(token_ids: Sequence[int], V: int) -> np.ndarray:
    ids = np.asarray(token_ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        bad = [int(t) for t in ids if t < 0 or t >= V]
        raise InvalidTokenError(f"token ids {bad} outside vocabulary of size {V}")
    return ids


def featurize(task, history: Sequence[int], k: int, vocab: Vocabulary) -> np.ndarray:
    V = len(vocab)
    if k < 1:
        raise ValueError("k must be >= 1")
    hist = _check_ids(history, V)
    feats = np.asarray(task.features, dtype=np.float64)
    phi = np.zeros(feats.size + k * V)
    phi[: feats.size] = feats
    for j in range(1, min(k, hist.size) + 1):
        phi[feats.size + (j - 1) * V + hist[-j]] = 1.0
    return phi


def sequence_features(task, token_ids: Sequence[int], k: int, V: int) -> np.ndarray:
    """Context features for every step of a sequence, shape (T, D_task + k*V)."""
    ids = _check_ids(token_ids, V)
    feats = np.asarray(task.features, dtype=np.float64)
    T = ids.size
    phi = np.zeros((T, feats.size + k * V))
    phi[:, : feats.size] = feats
    for j in range(1, k + 1):
        if T > j - 1:
            rows = np.arange(j, T)
            phi[rows, feats.size + (j - 1) * V + ids[: T - j]] = 1.0
    return phi


def log_softmax(logits: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(logits)):
        raise NumericalError("non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def token_distribution(params: PolicyParams, phi: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (params.D,):
        raise ValueError(f"feature vector has shape {phi.shape}, expected ({params.D},)")
    with np.errstate(over="ignore", invalid="ignore"):
        logits = params.W @ phi / temperature
    return np.exp(log_softmax(logits))


def _check_task(params: PolicyParams, task):
    if np.asarray(task.features).size != params.d_task:
        raise ValueError(
            f"task {getattr(task, 'id', '?')} has {np.asarray(task.features).size} features, "
            f"policy expects {params.d_task}"
        )


def step_logprobs(params: PolicyParams, task, token_ids: Sequence[int], temperature: float = 1.0):
    """Per-step log-probabilities of ``token_ids`` plus the features and full log-distributions.

    Returns ``(lp, phi, logp)`` with ``lp[t] = logp[t, token_ids[t]]``.
    """
    _check_task(params, task)
    ids = _check_ids(token_ids, params.V)
    phi = sequence_features(task, ids, params.k, params.V)
    logp = log_softmax(phi @ params.W.T / temperature)
    return logp[np.arange(ids.size), ids], phi, logp


def sequence_logprob(params: PolicyParams, task, token_ids: Sequence[int], temperature: float = 1.0) -> float:
    lp, _, _ = step_logprobs(params, task, token_ids, temperature)
    return math.fsum(lp)


def grad_sequence_logprob(
    params: PolicyParams, task, token_ids: Sequence[int], temperature: float = 1.0
) -> np.ndarray:
    """Exact gradient of :func:`sequence_logprob` with respect to the flat weights."""
    return weighted_logprob_grad(params, task, token_ids, None, temperature)


def weighted_logprob_grad(params, task, token_ids, weights, temperature=1.0) -> np.ndarray:
    """Gradient of sum_t weights[t] * log pi(token_t | ctx_t); ``weights=None`` means all ones."""
    _, phi, logp = step_logprobs(params, task, token_ids, temperature)
    ids = np.asarray(token_ids, dtype=np.int64)
    err = -np.exp(logp)
    err[np.arange(ids.size), ids] += 1.0
    if weights is not None:
        err *= np.asarray(weights, dtype=np.float64)[:, None]
    return (err.T @ phi).reshape(-1) / temperature


# --- sampling -----------------------------------------------------------------


def rollout_rng(seed: int, step: int, task_index: int, rollout_index: int) -> np.random.Generator:
    """Independent Philox stream keyed on (seed, step, task_index, rollout_index).

    The key is hashed with numpy's SeedSequence, so the stream for a rollout
    does not depend on how many other rollouts were drawn before it.
    """
    ss = np.random.SeedSequence([seed & (2**64 - 1), step, task_index, rollout_index])
    return np.random.Generator(np.random.Philox(ss))


def _step_logits(W: np.ndarray, task_logits: np.ndarray, history: list[int], d_task: int, k: int, V: int):
    logits = task_logits.copy()
    for j in range(1, min(k, len(history)) + 1):
        logits += W[:, d_task + (j - 1) * V + history[-j]]
    return logits


def sample_completions(
    snapshot: PolicySnapshot,
    task,
    rngs,
    temperature: float = 1.0,
    max_len: int = 24,
) -> list[Completion]:
    """Draw one response per generator in ``rngs``, all for the same task.

    Responses are decoded side by side, but response i only ever consumes
    ``rngs[i]``: one ``u = rng.random()`` per step, taking the first token whose
    cumulative probability exceeds ``u`` (inverse-CDF sampling).  The result
    for a generator is therefore the same whatever else is in the batch.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    params = snapshot.params
    _check_task(params, task)
    W, V, k, d = params.W, params.V, params.k, params.d_task
    n = len(rngs)
    task_logits = W[:, :d] @ np.asarray(task.features, dtype=np.float64)
    eos = snapshot.vocab.eos_id
    ids = np.zeros((n, max_len), dtype=np.int64)
    lps = np.zeros((n, max_len))
    lengths = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    for t in range(max_len):
        logits = np.broadcast_to(task_logits, (active.size, V)).copy()
        for j in range(1, min(k, t) + 1):
            logits += W[:, d + (j - 1) * V + ids[active, t - j]].T
        logp = log_softmax(logits / temperature)
        cdf = np.cumsum(np.exp(logp), axis=1)
        u = np.array([rngs[i].random() for i in active])
        tok = np.minimum((cdf <= u[:, None]).sum(axis=1), V - 1)
        ids[active, t] = tok
        lps[active, t] = logp[np.arange(active.size), tok]
        lengths[active] = t + 1
        active = active[tok != eos]
        if active.size == 0:
            break
    out = []
    for i in range(n):
        seq = ids[i, : lengths[i]]
        out.append(Completion(tuple(int(x) for x in seq), tuple(float(x) for x in lps[i, : lengths[i]]),
                              snapshot.vocab.detokenize(seq)))
    return out


def sample_completion(
    snapshot: PolicySnapshot,
    task,
    temperature: float = 1.0,
    max_len: int = 24,
    rng: np.random.Generator | None = None,
) -> Completion:
    """Draw one response token by token (see :func:`sample_completions`)."""
    if rng is None:
        raise ValueError("sample_completion needs an explicit rng")
    return sample_completions(snapshot, task, [rng], temperature, max_len)[0]


def greedy_completion(snapshot: PolicySnapshot, task, max_len: int = 24) -> Completion:
    """Argmax decoding; ties go to the lowest token index."""
    params = snapshot.params
    _check_task(params, task)
    W, V, k, d = params.W, params.V, params.k, params.d_task
    task_logits = W[:, :d] @ np.asarray(task.features, dtype=np.float64)
    eos = snapshot.vocab.eos_id
    ids: list[int] = []
    while len(ids) < max_len:
        tok = int(np.argmax(_step_logits(W, task_logits, ids, d, k, V)))
        ids.append(tok)
        if tok == eos:
            break
    lp, _, _ = step_logprobs(params, task, ids, 1.0)
    return Completion(tuple(ids), tuple(float(x) for x in lp), snapshot.vocab.detokenize(ids))


# --- checkpoints --------------------------------------------------------------


def write_checkpoint(snapshot: PolicySnapshot, path) -> None:
    p = snapshot.params
    lines = [CHECKPOINT_MAGIC, f"{p.V} {p.D} {p.k} {p.d_task}", " ".join(snapshot.vocab.tokens)]
    for row in p.W:
        lines.append(" ".join(f"{x:.17g}" for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_checkpoint(path) -> PolicySnapshot:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    lines = text.splitlines()

    def fail(lineno, msg):
        raise CheckpointError(f"{path}: line {lineno}: {msg}")

    if not lines or lines[0].strip() != CHECKPOINT_MAGIC:
        fail(1, f"expected header {CHECKPOINT_MAGIC!r}")
    if len(lines) < 3:
        fail(len(lines) + 1, "truncated checkpoint")
    try:
        V, D, k, d_task = (int(x) for x in lines[1].split())
    except ValueError:
        fail(2, "expected four integers 'V D k D_task'")
    if D != d_task + k * V:
        fail(2, f"D={D} inconsistent with D_task + k*V = {d_task + k * V}")
    tokens = lines[2].split()
    if len(tokens) != V:
        fail(3, f"expected {V} vocabulary symbols, got {len(tokens)}")
    body = [ln for ln in lines[3:]]
    while body and not body[-1].strip():
        body.pop()
    if len(body) != V:
        fail(4 + min(len(body), V), f"expected {V} weight rows, got {len(body)}")
    W = np.empty((V, D))
    for r, ln in enumerate(body):
        fields = ln.split()
        if len(fields) != D:
            fail(4 + r, f"expected {D} values, got {len(fields)}")
        try:
            W[r] = [float(x) for x in fields]
        except ValueError:
            fail(4 + r, "unparseable number")
    try:
        vocab = Vocabulary(tuple(tokens))
        params = PolicyParams(W.reshape(-1), V, k, d_task)
    except (ValueError, NumericalError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return PolicySnapshot(params, vocab, "current")
