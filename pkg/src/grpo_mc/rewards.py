"""Verifiable rewards: answer accuracy, format consistency and their weighted sum."""
from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .parser import extract_answer, validate_format


@dataclass(frozen=True)
class RewardWeights:
    lambda_acc: float = 1.0
    lambda_fmt: float = 1.0

    def __post_init__(self):
        if self.lambda_acc < 0 or self.lambda_fmt < 0:
            raise ConfigError("reward weights must be non-negative")


@dataclass(frozen=True)
class RewardBreakdown:
    r_acc: int
    r_fmt: int
    total: float


def reward_accuracy(predicted, gold) -> int:
    gold = frozenset(gold)
    if not gold:
        raise ConfigError("gold answer set is empty")
    return int(frozenset(predicted) == gold)


def reward_format(text: str) -> int:
    return int(validate_format(text))


def combine(r_acc, r_fmt, weights: RewardWeights = RewardWeights()) -> float:
    return weights.lambda_acc * r_acc + weights.lambda_fmt * r_fmt


def grade_text(text: str, options, gold, weights: RewardWeights = RewardWeights()) -> RewardBreakdown:
    r_fmt = reward_format(text)
    # extraction of a malformed response is empty, so it can never be accurate
    r_acc = reward_accuracy(extract_answer(text, len(options)), gold)
    return RewardBreakdown(r_acc, r_fmt, combine(r_acc, r_fmt, weights))


def grade_completion(completion, task, weights: RewardWeights = RewardWeights()) -> RewardBreakdown:
    return grade_text(completion.text, task.options, task.gold, weights)
