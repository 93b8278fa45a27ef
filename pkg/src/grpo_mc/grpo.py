"""Group-relative policy optimisation for the linear-softmax policy.

No value function is involved: each response's advantage is its reward
standardised within its group of G siblings, and the objective per group is

    J = (1/G) * sum_i [ exp(logpi(o_i) - logpi_old(o_i)) * A_i - beta * KL_i ]

where KL_i is the mean per-token k3 estimate against the frozen reference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, NumericalError
from .policy import (
    Completion,
    PolicyParams,
    PolicySnapshot,
    greedy_completion,
    rollout_rng,
    sample_completions,
    step_logprobs,
    weighted_logprob_grad,
)
from .rewards import RewardWeights, grade_completion


@dataclass(frozen=True)
class TrainConfig:
    G: int = 8
    beta: float = 0.04
    weights: RewardWeights = field(default_factory=RewardWeights)
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

    def __post_init__(self):
        if self.G < 2:
            raise ConfigError(f"group size G must be >= 2, got {self.G}")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.max_len < 1 or self.steps < 0 or self.batch_size < 1:
            raise ConfigError("max_len and batch_size must be >= 1, steps >= 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.clip_eps is not None and self.clip_eps <= 0:
            raise ConfigError("clip_eps must be positive when set")


@dataclass
class GroupSample:
    task: object
    completions: list[Completion]
    rewards: list[float]
    advantages: list[float]
    breakdowns: list = field(default_factory=list)


@dataclass(frozen=True)
class StepMetrics:
    step: int
    loss: float
    reward_total: float
    reward_acc: float
    reward_fmt: float
    kl: float
    completion_len: float

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(f.name for f in fields(cls))

    def csv_row(self) -> str:
        return ",".join([str(self.step)] + [repr(float(getattr(self, f.name))) for f in fields(self)[1:]])


def compute_advantages(rewards, eps_std: float = 1e-8) -> list[float]:
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ConfigError("advantages need a group of at least 2 rewards")
    mu = r.mean()
    sigma = r.std()  # population std
    if sigma < eps_std:
        return [0.0] * r.size
    return list((r - mu) / sigma)


def k3_terms(lp_current: np.ndarray, lp_ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-token k3 values and the ratios rho = pi_ref / pi_current."""
    log_rho = lp_ref - lp_current
    rho = np.exp(log_rho)
    return rho - log_rho - 1.0, rho


def kl_to_reference(current: PolicyParams, ref: PolicySnapshot, task, token_ids, temperature: float = 1.0) -> float:
    if len(token_ids) == 0:
        return 0.0
    lp_cur, _, _ = step_logprobs(current, task, token_ids, temperature)
    lp_ref, _, _ = step_logprobs(ref.params, task, token_ids, temperature)
    k3, _ = k3_terms(lp_cur, lp_ref)
    return float(k3.mean())


def _group_objective(current, old, ref, group, beta, temperature, clip_eps=None, need_grad=True):
    """Objective J, its gradient and the mean KL for one group."""
    G = len(group.completions)
    J = 0.0
    kl_total = 0.0
    grad = np.zeros_like(current.flat) if need_grad else None
    for comp, adv in zip(group.completions, group.advantages):
        ids = comp.token_ids
        T = len(ids)
        lp_cur, phi, logp = step_logprobs(current, group.task, ids, temperature)
        if old.params is current:
            lp_old = lp_cur
        else:
            lp_old, _, _ = step_logprobs(old.params, group.task, ids, temperature)
        lp_ref, _, _ = step_logprobs(ref.params, group.task, ids, temperature)
        log_ratio = math.fsum(lp_cur) - math.fsum(lp_old)
        ratio = math.exp(log_ratio)
        surrogate_scale = ratio * adv
        if clip_eps is not None:
            clipped = min(max(ratio, 1.0 - clip_eps), 1.0 + clip_eps)
            if clipped * adv < ratio * adv:
                surrogate_scale = 0.0
                ratio_term = clipped * adv
            else:
                ratio_term = ratio * adv
        else:
            ratio_term = ratio * adv
        if T:
            k3, rho = k3_terms(lp_cur, lp_ref)
            kl = float(k3.mean())
        else:
            kl = 0.0
        J += ratio_term - beta * kl
        kl_total += kl
        if need_grad and T:
            # d/dlp_t of [ratio*A - beta*mean(k3)] = ratio*A - beta*(1 - rho_t)/T
            w = surrogate_scale - beta * (1.0 - rho) / T
            err = -np.exp(logp)
            err[np.arange(T), ids] += 1.0
            with np.errstate(invalid="ignore", over="ignore"):
                grad += ((err * w[:, None]).T @ phi).reshape(-1) / temperature
    J /= G
    if need_grad:
        grad /= G
    if not math.isfinite(J) or (need_grad and not np.all(np.isfinite(grad))):
        raise NumericalError(
            f"non-finite GRPO objective for task {getattr(group.task, 'id', '?')}: J={J}, "
            f"advantages={list(group.advantages)}"
        )
    return J, grad, kl_total / G


def grpo_loss_and_grad(current: PolicyParams, old: PolicySnapshot, ref: PolicySnapshot, group: GroupSample,
                       beta: float, temperature: float = 1.0, clip_eps: float | None = None):
    """Loss ``-J`` and its exact gradient with respect to ``current.flat``."""
    J, grad, _ = _group_objective(current, old, ref, group, beta, temperature, clip_eps)
    return -J, -grad


def grpo_objective(current, old, ref, group, beta, temperature=1.0, clip_eps=None) -> float:
    return _group_objective(current, old, ref, group, beta, temperature, clip_eps, need_grad=False)[0]


# --- optimisers ---------------------------------------------------------------


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def update(self, flat: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return flat - self.lr * grad


class Adam:
    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def update(self, flat: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return flat - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: TrainConfig, size: int):
    if config.optimizer == "sgd":
        return SGD(config.lr)
    return Adam(size, config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps)


# --- training -----------------------------------------------------------------


def completion_length(comp: Completion, eos_id: int) -> int:
    """Tokens before end-of-sequence."""
    n = len(comp.token_ids)
    return n - 1 if n and comp.token_ids[-1] == eos_id else n


def sample_batch_indices(pool_size: int, batch_size: int, seed: int, step: int) -> list[int]:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed & (2**64 - 1), step, 0xBA7C])))
    return [int(i) for i in rng.integers(pool_size, size=batch_size)]


def rollout_group(old: PolicySnapshot, task, task_index: int, config: TrainConfig, step: int) -> GroupSample:
    rngs = [rollout_rng(config.seed, step, task_index, i) for i in range(config.G)]
    comps = sample_completions(old, task, rngs, config.temperature, config.max_len)
    breakdowns = [grade_completion(c, task, config.weights) for c in comps]
    rewards = [b.total for b in breakdowns]
    return GroupSample(task, comps, rewards, compute_advantages(rewards, config.eps_std), breakdowns)


class GRPOTrainer:
    """Holds the current parameters, frozen reference and optimiser state."""

    def __init__(self, config: TrainConfig, init: PolicySnapshot):
        self.config = config
        self.vocab = init.vocab
        self.params = init.params
        self.reference = init.as_role("reference")
        self.optimizer = make_optimizer(config, init.params.flat.size)
        self.step = 0
        self.last_groups: list[GroupSample] = []

    @property
    def snapshot(self) -> PolicySnapshot:
        return PolicySnapshot(self.params, self.vocab, "current")

    def train_step(self, batch) -> StepMetrics:
        """One rollout-and-update step on ``batch``, a list of (task_index, task) pairs."""
        cfg = self.config
        old = PolicySnapshot(self.params, self.vocab, "old")
        groups = [rollout_group(old, task, idx, cfg, self.step) for idx, task in batch]
        J_sum = 0.0
        kl_sum = 0.0
        grad = np.zeros_like(self.params.flat)
        for g in groups:
            J, g_grad, kl = _group_objective(self.params, old, self.reference, g, cfg.beta, cfg.temperature, cfg.clip_eps)
            J_sum += J
            kl_sum += kl
            grad -= g_grad
        n = len(groups)
        grad /= n
        new_flat = self.optimizer.update(self.params.flat, grad)
        if not np.all(np.isfinite(new_flat)):
            raise NumericalError(f"step {self.step}: optimiser produced non-finite parameters")
        self.params = self.params.with_flat(new_flat)
        self.last_groups = groups

        brs = [b for g in groups for b in g.breakdowns]
        eos = self.vocab.eos_id
        metrics = StepMetrics(
            step=self.step,
            loss=-J_sum / n,
            reward_total=float(np.mean([b.total for b in brs])),
            reward_acc=float(np.mean([b.r_acc for b in brs])),
            reward_fmt=float(np.mean([b.r_fmt for b in brs])),
            kl=kl_sum / n,
            completion_len=float(np.mean([completion_length(c, eos) for g in groups for c in g.completions])),
        )
        self.step += 1
        return metrics

    def run(self, tasks, steps: int | None = None, callback=None) -> list[StepMetrics]:
        steps = self.config.steps if steps is None else steps
        history = []
        for _ in range(steps):
            idx = sample_batch_indices(len(tasks), self.config.batch_size, self.config.seed, self.step)
            m = self.train_step([(i, tasks[i]) for i in idx])
            history.append(m)
            if callback is not None:
                callback(m, self)
        return history


def evaluate(snapshot: PolicySnapshot, tasks, max_len: int = 24) -> float:
    """Greedy-decoding multiple-choice accuracy."""
    tasks = list(tasks)
    if not tasks:
        raise ConfigError("empty evaluation set")
    hits = 0
    for task in tasks:
        comp = greedy_completion(snapshot, task, max_len)
        hits += grade_completion(comp, task).r_acc
    return hits / len(tasks)
